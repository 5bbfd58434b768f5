use dualcert::activations::ActivationKind;
use dualcert::model::{argmax, InputRegion, Network};
use dualcert::propagation::output_margin_lower_bounds;
use dualcert::verifier::{
    analyze, certify, verify_at, Strategy as Plan, VerifierConfig, VerifyStatus,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64) -> (Network, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=10)).collect();
    let d = rng.random_range(1..=5);
    let kind = ActivationKind::ALL[rng.random_range(0..3)];
    let net = Network::random(&mut rng, d, &hidden, 3, kind);
    let x0 = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, x0)
}

fn strategy() -> impl Strategy<Value = Plan> {
    prop::sample::select(Plan::ALL.to_vec())
}

fn margins(net: &Network, x0: &[f64], eps: f64, cfg: &VerifierConfig) -> Vec<f64> {
    let region = InputRegion::new(x0.to_vec(), eps).unwrap();
    let c = argmax(&net.forward(x0).unwrap());
    let others: Vec<usize> = (0..net.output_dim()).filter(|&l| l != c).collect();
    let analysis = analyze(net, &region, cfg, None).unwrap();
    output_margin_lower_bounds(net, &region, &analysis.bounds, c, &others).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn margin_bounds_shrink_with_radius(seed in any::<u64>(), s in strategy(), e1 in 0.0..0.3f64, de in 0.0..0.3f64) {
        let (net, x0) = setup(seed);
        let cfg = VerifierConfig::default().with_strategy(s);
        let small = margins(&net, &x0, e1, &cfg);
        let large = margins(&net, &x0, e1 + de, &cfg);
        for (a, b) in small.iter().zip(&large) {
            prop_assert!(*a >= b - 1e-9, "{a} < {b}");
        }
    }

    #[test]
    fn zero_radius_is_exact(seed in any::<u64>(), s in strategy()) {
        let (net, x0) = setup(seed);
        let cfg = VerifierConfig::default().with_strategy(s);
        let region = InputRegion::new(x0.clone(), 0.0).unwrap();
        let analysis = analyze(&net, &region, &cfg, None).unwrap();
        let trace = net.trace(&x0).unwrap();
        for (i, (lo, hi)) in analysis.bounds.lower.iter().zip(&analysis.bounds.upper).enumerate() {
            for r in 0..lo.len() {
                prop_assert!((lo[r] - trace.pre[i][r]).abs() < 1e-9);
                prop_assert!((hi[r] - trace.pre[i][r]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn certified_radius_reverifies(seed in any::<u64>(), s in strategy()) {
        let (net, x0) = setup(seed);
        let cfg = VerifierConfig::default().with_strategy(s);
        let c = certify(&net, &x0, &cfg).unwrap();
        prop_assert!(c.epsilon >= 0.0 && c.epsilon <= cfg.eps_max);
        if c.epsilon > 0.0 {
            let v = verify_at(&net, &x0, c.epsilon, &cfg).unwrap();
            prop_assert_eq!(v.status, VerifyStatus::Robust);
            prop_assert!(v.margins.iter().all(|m| m.lower_bound > 0.0));
        }
    }

    #[test]
    fn falsified_outcomes_carry_valid_witnesses(seed in any::<u64>(), s in strategy(), eps in 0.0..3.0f64) {
        let (net, x0) = setup(seed);
        let cfg = VerifierConfig::default().with_strategy(s);
        let v = verify_at(&net, &x0, eps, &cfg).unwrap();
        let region = InputRegion::new(x0.clone(), eps).unwrap();
        match v.status {
            VerifyStatus::Falsified => {
                let w = v.counterexample.unwrap();
                prop_assert!(region.contains(&w));
                prop_assert_ne!(net.predict(&w).unwrap(), v.predicted);
            }
            _ => prop_assert!(v.counterexample.is_none()),
        }
    }
}
