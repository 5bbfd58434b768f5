//! Robustness queries: a yes/no check at a fixed radius, the largest
//! certified radius by search, and dataset-level summaries.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, InputRegion, Instance, Network};
use crate::propagation::{output_margin_lower_bounds, propagate, LayerBounds, Relax};
use crate::underapprox::{
    combine, gradient_under, sample_scan, UnderBounds, UnderConfig, UnderStrategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "dual-sample")]
    DualSample,
    #[serde(rename = "dual-grad")]
    DualGrad,
    #[serde(rename = "dual-both")]
    DualBoth,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Self::Single,
        Self::DualSample,
        Self::DualGrad,
        Self::DualBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::DualSample => "dual-sample",
            Self::DualGrad => "dual-grad",
            Self::DualBoth => "dual-both",
        }
    }

    /// Under-approximation used to guide the relaxations, if any.
    pub fn under(self) -> Option<UnderStrategy> {
        match self {
            Self::Single => None,
            Self::DualSample => Some(UnderStrategy::Sampling),
            Self::DualGrad => Some(UnderStrategy::Gradient),
            Self::DualBoth => Some(UnderStrategy::Both),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy `{s}` (expected single, dual-sample, dual-grad or dual-both)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub strategy: Strategy,
    pub under: UnderConfig,
    pub eps_max: f64,
    /// Relative width `(hi - lo) / hi` at which the radius search stops.
    pub search_tol: f64,
    pub max_search_iters: usize,
    pub falsify: bool,
    /// Optional global input box applied to every coordinate.
    pub clamp: Option<(f64, f64)>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::DualSample,
            under: UnderConfig::default(),
            eps_max: 1.0,
            search_tol: 1e-4,
            max_search_iters: 30,
            falsify: true,
            clamp: None,
        }
    }
}

impl VerifierConfig {
    pub fn with_strategy(self, strategy: Strategy) -> Self {
        Self { strategy, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps_max.is_finite() || self.eps_max <= 0.0 {
            return Err(Error::Config(format!(
                "eps_max must be positive, got {}",
                self.eps_max
            )));
        }
        if self.search_tol.is_nan() || self.search_tol <= 0.0 {
            return Err(Error::Config(format!(
                "search_tol must be positive, got {}",
                self.search_tol
            )));
        }
        self.under.validate()
    }

    fn region(&self, x0: &[f64], eps: f64) -> Result<InputRegion> {
        let region = InputRegion::new(x0.to_vec(), eps)?;
        match self.clamp {
            Some((lo, hi)) => region.with_clamp(lo, hi),
            None => Ok(region),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyStatus {
    Robust,
    Unknown,
    Falsified,
}

impl VerifyStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Robust => "robust",
            Self::Unknown => "unknown",
            Self::Falsified => "falsified",
        }
    }
}

impl fmt::Display for VerifyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMargin {
    pub label: usize,
    /// Lower bound of `F_predicted - F_label` over the region.
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub status: VerifyStatus,
    pub predicted: usize,
    pub margins: Vec<LabelMargin>,
    /// In-region input with a different prediction; set iff falsified.
    pub counterexample: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyResult {
    pub epsilon: f64,
    /// Number of radius checks performed.
    pub iterations: usize,
    /// The search stopped at `eps_max` while still robust.
    pub at_cap: bool,
}

/// Under-approximation, over-approximation and (when sampling) the first
/// misclassified sample for one region.
pub struct Analysis {
    pub under: Option<UnderBounds>,
    pub bounds: LayerBounds,
    pub sample_counterexample: Option<Vec<f64>>,
}

/// Runs the configured under-approximation and propagation on `region`.
/// `watch` is the label whose misclassification the sampler should record.
pub fn analyze(
    net: &Network,
    region: &InputRegion,
    cfg: &VerifierConfig,
    watch: Option<usize>,
) -> Result<Analysis> {
    let u = &cfg.under;
    let (under, sample_counterexample) = match cfg.strategy.under() {
        None => (None, None),
        Some(UnderStrategy::Gradient) => {
            (Some(gradient_under(net, region, u.step_fraction)?), None)
        }
        Some(UnderStrategy::Sampling) => {
            let scan = sample_scan(net, region, u.n_samples, u.seed, watch)?;
            (Some(scan.bounds), scan.counterexample)
        }
        Some(UnderStrategy::Both) => {
            let scan = sample_scan(net, region, u.n_samples, u.seed, watch)?;
            let grad = gradient_under(net, region, u.step_fraction)?;
            (Some(combine(&scan.bounds, &grad)?), scan.counterexample)
        }
    };
    let relax = match &under {
        Some(bounds) => Relax::Dual(bounds),
        None => Relax::Single,
    };
    let bounds = propagate(net, region, relax)?;
    Ok(Analysis {
        under,
        bounds,
        sample_counterexample,
    })
}

/// One signed-gradient step of length ε against each margin in `labels`.
pub fn gradient_attack(
    net: &Network,
    region: &InputRegion,
    predicted: usize,
    labels: &[usize],
) -> Result<Option<Vec<f64>>> {
    let x0 = region.center();
    let mut seed = vec![0.0; net.output_dim()];
    for &ell in labels {
        seed.iter_mut().for_each(|s| *s = 0.0);
        seed[predicted] = 1.0;
        seed[ell] = -1.0;
        let grad = net.output_gradient(x0, &seed)?;
        let mut x: Vec<f64> = x0
            .iter()
            .zip(&grad)
            .map(|(c, g)| {
                if *g == 0.0 {
                    *c
                } else {
                    c - region.radius() * g.signum()
                }
            })
            .collect();
        region.project(&mut x);
        if net.predict(&x)? != predicted {
            return Ok(Some(x));
        }
    }
    Ok(None)
}

pub fn verify_at(
    net: &Network,
    x0: &[f64],
    eps: f64,
    cfg: &VerifierConfig,
) -> Result<VerifyOutcome> {
    cfg.validate()?;
    if x0.len() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: x0.len(),
        });
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Region(format!(
            "radius must be non-negative, got {eps}"
        )));
    }
    let region = cfg.region(x0, eps)?;
    let predicted = argmax(&net.forward(x0)?);
    let others: Vec<usize> = (0..net.output_dim()).filter(|&l| l != predicted).collect();

    let analysis = analyze(net, &region, cfg, cfg.falsify.then_some(predicted))?;
    let bounds = output_margin_lower_bounds(net, &region, &analysis.bounds, predicted, &others)?;
    let margins: Vec<LabelMargin> = others
        .iter()
        .zip(bounds)
        .map(|(&label, lower_bound)| LabelMargin { label, lower_bound })
        .collect();

    if margins.iter().all(|m| m.lower_bound > 0.0) {
        return Ok(VerifyOutcome {
            status: VerifyStatus::Robust,
            predicted,
            margins,
            counterexample: None,
        });
    }

    let mut counterexample = None;
    if cfg.falsify {
        counterexample = analysis.sample_counterexample;
        if counterexample.is_none() {
            let open: Vec<usize> = margins
                .iter()
                .filter(|m| m.lower_bound <= 0.0)
                .map(|m| m.label)
                .collect();
            counterexample = gradient_attack(net, &region, predicted, &open)?;
        }
    }
    Ok(VerifyOutcome {
        status: if counterexample.is_some() {
            VerifyStatus::Falsified
        } else {
            VerifyStatus::Unknown
        },
        predicted,
        margins,
        counterexample,
    })
}

/// Largest radius (up to `eps_max`) at which [`verify_at`] reports robust.
///
/// The radius doubles from `eps_max / 1024` until a check fails or the cap is
/// reached, then bisects between the last robust and first failing radius.
/// Only radii that were checked robust are ever returned.
pub fn certify(net: &Network, x0: &[f64], cfg: &VerifierConfig) -> Result<CertifyResult> {
    cfg.validate()?;
    let out = net.forward(x0)?;
    let top = argmax(&out);
    if out
        .iter()
        .enumerate()
        .any(|(i, v)| i != top && *v >= out[top])
    {
        return Ok(CertifyResult {
            epsilon: 0.0,
            iterations: 0,
            at_cap: false,
        });
    }

    let mut iterations = 0;
    let mut robust = |eps: f64| -> Result<bool> {
        iterations += 1;
        Ok(verify_at(net, x0, eps, cfg)?.status == VerifyStatus::Robust)
    };

    let mut lo = 0.0;
    let mut eps = cfg.eps_max / 1024.0;
    let mut hi = loop {
        if !robust(eps)? {
            break eps;
        }
        lo = eps;
        if eps >= cfg.eps_max {
            return Ok(CertifyResult {
                epsilon: lo,
                iterations,
                at_cap: true,
            });
        }
        eps = (2.0 * eps).min(cfg.eps_max);
    };

    let mut steps = 0;
    while steps < cfg.max_search_iters && (hi - lo) / hi > cfg.search_tol {
        let mid = 0.5 * (lo + hi);
        if robust(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    Ok(CertifyResult {
        epsilon: lo,
        iterations,
        at_cap: false,
    })
}

/// Per-instance seed derived from the base seed and the instance index.
pub fn instance_seed(base: u64, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    /// `None` for misclassified instances, which are not certified.
    pub result: Option<CertifyResult>,
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub instances: Vec<InstanceResult>,
    /// Mean and median over correctly classified instances.
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub wall_time: Duration,
}

impl DatasetSummary {
    pub fn misclassified(&self) -> Vec<usize> {
        self.instances
            .iter()
            .filter(|r| r.result.is_none())
            .map(|r| r.index)
            .collect()
    }

    pub fn certified(&self) -> Vec<f64> {
        self.instances
            .iter()
            .filter_map(|r| r.result.map(|c| c.epsilon))
            .collect()
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Certifies every instance; `first_index` numbers the rows (for seeds and
/// reports). Instances run concurrently on the current rayon pool, and
/// results keep input order.
pub fn certify_dataset(
    net: &Network,
    instances: &[Instance],
    first_index: usize,
    cfg: &VerifierConfig,
) -> Result<DatasetSummary> {
    if instances.is_empty() {
        return Err(Error::Config("no instances to certify".into()));
    }
    cfg.validate()?;
    for (k, inst) in instances.iter().enumerate() {
        if inst.features.len() != net.input_dim() {
            return Err(Error::Config(format!(
                "instance {}: expected {} features, got {}",
                first_index + k,
                net.input_dim(),
                inst.features.len()
            )));
        }
    }
    let start = Instant::now();
    let instances: Vec<InstanceResult> = instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| {
            let index = first_index + k;
            let t = Instant::now();
            let predicted = net.predict(&inst.features)?;
            let result = if predicted == inst.label {
                let mut local = *cfg;
                local.under.seed = instance_seed(cfg.under.seed, index);
                Some(certify(net, &inst.features, &local)?)
            } else {
                None
            };
            Ok(InstanceResult {
                index,
                label: inst.label,
                predicted,
                result,
                runtime: t.elapsed(),
            })
        })
        .collect::<Result<_>>()?;
    let certified: Vec<f64> = instances
        .iter()
        .filter_map(|r| r.result.map(|c| c.epsilon))
        .collect();
    Ok(DatasetSummary {
        mean: mean(&certified),
        median: median(&certified),
        instances,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;
    use crate::model::AffineLayer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::random(&mut rng, 3, &[6, 5], 3, ActivationKind::Sigmoid)
    }

    fn constant_net() -> Network {
        Network::new(vec![
            AffineLayer::from_rows(vec![vec![0.0, 0.0]], vec![0.0], Some(ActivationKind::Tanh)),
            AffineLayer::from_rows(vec![vec![0.0], vec![0.0]], vec![1.0, 0.5], None),
        ])
        .unwrap()
    }

    #[test]
    fn zero_radius_is_robust_with_exact_margins() {
        let net = small_net(1);
        let x = [0.2, -0.3, 0.5];
        let out = net.forward(&x).unwrap();
        for strategy in Strategy::ALL {
            let cfg = VerifierConfig::default().with_strategy(strategy);
            let v = verify_at(&net, &x, 0.0, &cfg).unwrap();
            assert_eq!(v.status, VerifyStatus::Robust);
            for m in &v.margins {
                assert!((m.lower_bound - (out[v.predicted] - out[m.label])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tie_is_never_robust() {
        let net = Network::new(vec![
            AffineLayer::from_rows(vec![vec![1.0]], vec![0.0], Some(ActivationKind::Sigmoid)),
            AffineLayer::from_rows(vec![vec![1.0], vec![1.0]], vec![0.0, 0.0], None),
        ])
        .unwrap();
        let v = verify_at(&net, &[0.3], 0.0, &VerifierConfig::default()).unwrap();
        assert_ne!(v.status, VerifyStatus::Robust);
        let c = certify(&net, &[0.3], &VerifierConfig::default()).unwrap();
        assert_eq!((c.epsilon, c.iterations), (0.0, 0));
    }

    #[test]
    fn falsified_witness_is_misclassified() {
        // Class 0 iff x > 0.
        let net = Network::new(vec![
            AffineLayer::from_rows(vec![vec![1.0]], vec![0.0], Some(ActivationKind::Tanh)),
            AffineLayer::from_rows(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0], None),
        ])
        .unwrap();
        let x = [0.5];
        for strategy in Strategy::ALL {
            let cfg = VerifierConfig::default().with_strategy(strategy);
            let v = verify_at(&net, &x, 2.0, &cfg).unwrap();
            assert_eq!(v.status, VerifyStatus::Falsified);
            let cex = v.counterexample.unwrap();
            let region = InputRegion::new(x.to_vec(), 2.0).unwrap();
            assert!(region.contains(&cex));
            assert_ne!(net.predict(&cex).unwrap(), v.predicted);
            let off = VerifierConfig {
                falsify: false,
                ..cfg
            };
            assert_eq!(
                verify_at(&net, &x, 2.0, &off).unwrap().status,
                VerifyStatus::Unknown
            );
        }
    }

    #[test]
    fn rejects_bad_queries() {
        let net = small_net(3);
        assert!(verify_at(&net, &[0.0, 0.0], 0.1, &VerifierConfig::default()).is_err());
        assert!(verify_at(&net, &[0.0; 3], -0.1, &VerifierConfig::default()).is_err());
        let bad = VerifierConfig {
            eps_max: 0.0,
            ..Default::default()
        };
        assert!(certify(&net, &[0.0; 3], &bad).is_err());
    }

    #[test]
    fn constant_network_certifies_to_cap() {
        let net = constant_net();
        for strategy in Strategy::ALL {
            let cfg = VerifierConfig::default().with_strategy(strategy);
            let c = certify(&net, &[0.3, 0.4], &cfg).unwrap();
            assert!(c.at_cap);
            assert_eq!(c.epsilon, cfg.eps_max);
        }
    }

    #[test]
    fn certified_radius_verifies() {
        let net = small_net(4);
        let x = [0.4, -0.2, 0.3];
        for strategy in Strategy::ALL {
            let cfg = VerifierConfig::default().with_strategy(strategy);
            let c = certify(&net, &x, &cfg).unwrap();
            assert!(c.epsilon > 0.0);
            assert_eq!(
                verify_at(&net, &x, c.epsilon, &cfg).unwrap().status,
                VerifyStatus::Robust
            );
        }
    }

    #[test]
    fn dataset_summary() {
        let net = constant_net();
        let one = [Instance {
            label: 0,
            features: vec![0.0, 0.0],
        }];
        let s = certify_dataset(&net, &one, 0, &VerifierConfig::default()).unwrap();
        assert_eq!(s.mean, Some(s.instances[0].result.unwrap().epsilon));

        let wrong = [
            Instance {
                label: 1,
                features: vec![0.0, 0.0],
            },
            Instance {
                label: 1,
                features: vec![1.0, 0.0],
            },
        ];
        let s = certify_dataset(&net, &wrong, 0, &VerifierConfig::default()).unwrap();
        assert_eq!(s.mean, None);
        assert_eq!(s.misclassified(), vec![0, 1]);
        assert!(certify_dataset(&net, &[], 0, &VerifierConfig::default()).is_err());
        let malformed = [Instance {
            label: 0,
            features: vec![0.0],
        }];
        assert!(certify_dataset(&net, &malformed, 0, &VerifierConfig::default()).is_err());
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mean(&[]), None);
        assert_ne!(instance_seed(1, 0), instance_seed(1, 1));
        assert_eq!(instance_seed(7, 3), instance_seed(7, 3));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("dual".parse::<Strategy>().is_err());
    }
}
