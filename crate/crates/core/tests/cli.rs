use std::path::PathBuf;
use std::process::Command;

use dualcert::activations::ActivationKind;
use dualcert::cli::{run_with, EXIT_ERROR, EXIT_FALSIFIED, EXIT_OK};
use dualcert::model::{AffineLayer, Network};
use dualcert::report::{fmt_g, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
    model: PathBuf,
    input: PathBuf,
}

impl Fixture {
    fn new(net: &Network, rows: &[(usize, Vec<f64>)]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("net.json");
        net.save(&model).unwrap();
        let input = dir.path().join("data.csv");
        let text: String = rows
            .iter()
            .map(|(label, x)| {
                let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                format!("{label},{}\n", xs.join(","))
            })
            .collect();
        std::fs::write(&input, text).unwrap();
        Self { dir, model, input }
    }

    /// Random tanh network with correctly labelled random inputs.
    fn random(seed: u64, count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::random(&mut rng, 4, &[12, 10], 3, ActivationKind::Tanh);
        let rows: Vec<_> = (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                (net.predict(&x).unwrap(), x)
            })
            .collect();
        Self::new(&net, &rows)
    }

    /// Class 0 iff x > 0.
    fn threshold() -> Self {
        let net = Network::new(vec![
            AffineLayer::from_rows(vec![vec![1.0]], vec![0.0], Some(ActivationKind::Sigmoid)),
            AffineLayer::from_rows(vec![vec![1.0], vec![-1.0]], vec![-0.5, 0.5], None),
        ])
        .unwrap();
        Self::new(&net, &[(0, vec![0.5]), (1, vec![-0.5])])
    }

    fn args<'a>(&'a self, cmd: &'a str, extra: &[&'a str]) -> Vec<String> {
        let mut v = vec![
            "dualcert".to_string(),
            cmd.to_string(),
            "--model".into(),
            self.model.display().to_string(),
            "--input".into(),
            self.input.display().to_string(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn run(args: Vec<String>) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(args, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn report(text: &str) -> Report {
    Report::from_json(text).unwrap()
}

#[test]
fn verify_at_zero_radius_is_robust() {
    let f = Fixture::threshold();
    let (code, out, _) = run(f.args("verify", &["--eps", "0"]));
    assert_eq!(code, EXIT_OK);
    let r = report(&out);
    let row = &r.rows[0];
    assert_eq!(row.status.unwrap().to_string(), "robust");
    assert_eq!(row.margins.len(), 1);
    assert!(row.margins[0].lower_bound > 0.0);
}

#[test]
fn verify_falsifies_with_witness() {
    let f = Fixture::threshold();
    let (code, out, _) = run(f.args("verify", &["--eps", "2", "--index", "1"]));
    assert_eq!(code, EXIT_FALSIFIED);
    let r = report(&out);
    let cex = r.rows[0].counterexample.clone().unwrap();
    let net = Network::load(&f.model).unwrap();
    assert!((cex[0] + 0.5).abs() <= 2.0);
    assert_ne!(net.predict(&cex).unwrap(), r.rows[0].predicted);
}

#[test]
fn verify_without_falsification_reports_unknown() {
    let f = Fixture::threshold();
    let (code, _, _) = run(f.args("verify", &["--eps", "2", "--no-falsify"]));
    assert_eq!(code, 2);
}

#[test]
fn missing_model_names_the_path() {
    let f = Fixture::threshold();
    let missing = f.path("nowhere.json");
    let mut args = f.args("verify", &["--eps", "0.1"]);
    args[3] = missing.display().to_string();
    let (code, out, err) = run(args);
    assert_eq!(code, EXIT_ERROR);
    assert!(out.is_empty());
    assert!(err.contains(&missing.display().to_string()), "{err}");
}

#[test]
fn malformed_model_names_the_path() {
    let f = Fixture::threshold();
    std::fs::write(&f.model, "{not json").unwrap();
    let (code, _, err) = run(f.args("verify", &["--eps", "0.1"]));
    assert_eq!(code, EXIT_ERROR);
    assert!(err.contains(&f.model.display().to_string()), "{err}");
}

#[test]
fn usage_errors_and_help() {
    let f = Fixture::threshold();
    assert_eq!(run(f.args("verify", &[])).0, EXIT_ERROR);
    assert_eq!(
        run(f.args("verify", &["--eps", "0", "--strategy", "nope"])).0,
        EXIT_ERROR
    );
    assert_eq!(
        run(f.args("verify", &["--eps", "0", "--format", "xml"])).0,
        EXIT_ERROR
    );
    assert_eq!(run(f.args("verify", &["--eps", "-1"])).0, EXIT_ERROR);
    assert_eq!(
        run(f.args("verify", &["--eps", "0", "--index", "9"])).0,
        EXIT_ERROR
    );
    assert_eq!(
        run(f.args("verify", &["--eps", "0", "--samples", "0"])).0,
        EXIT_ERROR
    );
    let (code, out, _) = run(vec!["dualcert".into(), "--help".into()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("certify"));
}

#[test]
fn certify_single_instance() {
    let f = Fixture::random(3, 4);
    let (code, out, _) = run(f.args("certify", &["--count", "1"]));
    assert_eq!(code, EXIT_OK);
    let r = report(&out);
    assert_eq!(r.rows.len(), 1);
    let agg = r.aggregates.unwrap();
    assert_eq!(agg.mean, r.rows[0].epsilon);
    assert!(r.rows[0].runtime_ms.is_none());
}

#[test]
fn certify_reports_misclassified_rows() {
    let f = Fixture::threshold();
    std::fs::write(&f.input, "1,0.5\n0,-0.5\n").unwrap();
    let (code, out, _) = run(f.args("certify", &[]));
    assert_eq!(code, EXIT_OK);
    let agg = report(&out).aggregates.unwrap();
    assert_eq!(agg.misclassified, vec![0, 1]);
    assert_eq!(agg.mean, None);
}

#[test]
fn certify_is_deterministic() {
    let f = Fixture::random(4, 5);
    let a = run(f.args("certify", &["--seed", "9"]));
    let b = run(f.args("certify", &["--seed", "9"]));
    assert_eq!(a.0, EXIT_OK);
    assert_eq!(a.1, b.1);
}

#[test]
fn dual_mean_at_least_single_mean() {
    let f = Fixture::random(5, 8);
    let mean = |strategy: &str| {
        let (code, out, _) = run(f.args("certify", &["--strategy", strategy, "--seed", "1"]));
        assert_eq!(code, EXIT_OK);
        report(&out).aggregates.unwrap().mean.unwrap()
    };
    assert!(mean("dual-sample") >= mean("single") - 1e-9);
}

#[test]
fn timing_is_opt_in() {
    let f = Fixture::random(6, 2);
    let (_, out, _) = run(f.args("certify", &["--timing"]));
    let r = report(&out);
    assert!(r.rows.iter().all(|row| row.runtime_ms.is_some()));
    assert!(r.aggregates.unwrap().runtime_half_range_ms.is_some());
}

#[test]
fn formats_carry_the_same_numbers() {
    let f = Fixture::random(7, 3);
    let json = report(&run(f.args("certify", &[])).1);
    let csv = run(f.args("certify", &["--format", "csv"])).1;
    let md = run(f.args("certify", &["--format", "md"])).1;
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let eps_col = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "epsilon")
        .unwrap();
    let from_csv: Vec<String> = reader
        .records()
        .map(|r| r.unwrap()[eps_col].to_string())
        .collect();
    for (row, cell) in json.rows.iter().zip(&from_csv) {
        let g = fmt_g(row.epsilon.unwrap());
        assert_eq!(&g, cell);
        assert!(md.contains(&format!("| {g} |")));
    }
}

#[test]
fn out_flag_writes_file() {
    let f = Fixture::threshold();
    let path = f.path("report.json");
    let (code, out, _) = run(f.args("verify", &["--eps", "0", "--out", path.to_str().unwrap()]));
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.trim(), "robust");
    report(&std::fs::read_to_string(path).unwrap());
}

fn bounds(f: &Fixture, extra: &[&str]) -> Report {
    let (code, out, err) = run(f.args("bounds", extra));
    assert_eq!(code, EXIT_OK, "{err}");
    report(&out)
}

#[test]
fn bounds_at_zero_radius_have_zero_width() {
    let f = Fixture::random(8, 1);
    for b in bounds(&f, &["--eps", "0"]).bounds {
        assert!((b.u_over - b.l_over).abs() < 1e-12);
    }
}

#[test]
fn dual_bounds_nest_under_in_over() {
    let f = Fixture::random(9, 1);
    for strategy in ["dual-sample", "dual-grad", "dual-both"] {
        for b in bounds(&f, &["--eps", "0.2", "--strategy", strategy]).bounds {
            let (lu, uu) = (b.l_under.unwrap(), b.u_under.unwrap());
            assert!(b.l_over <= lu && lu <= uu && uu <= b.u_over);
        }
    }
    assert!(bounds(&f, &["--eps", "0.2", "--strategy", "single"])
        .bounds
        .iter()
        .all(|b| b.l_under.is_none()));
}

#[test]
fn bounds_contain_grid_domains() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = Network::random(&mut rng, 2, &[3, 3], 2, ActivationKind::Arctan);
    let x0 = vec![0.2, -0.4];
    let f = Fixture::new(&net, &[(0, x0.clone())]);
    let eps = 0.3;
    let r = bounds(&f, &["--eps", "0.3"]);
    let n = 101;
    for i in 0..n {
        for j in 0..n {
            let x = [
                x0[0] - eps + 2.0 * eps * i as f64 / (n - 1) as f64,
                x0[1] - eps + 2.0 * eps * j as f64 / (n - 1) as f64,
            ];
            let trace = net.trace(&x).unwrap();
            for b in &r.bounds {
                let z = trace.pre[b.layer - 1][b.neuron];
                assert!(z >= b.l_over - 1e-9 && z <= b.u_over + 1e-9);
            }
        }
    }
}

#[test]
fn compare_against_itself_is_zero_improvement() {
    let f = Fixture::random(11, 3);
    let (code, out, _) = run(f.args("compare", &["--strategies", "single,single"]));
    assert_eq!(code, EXIT_OK);
    let r = report(&out);
    assert_eq!(r.comparison.len(), 2);
    assert!(r.comparison.iter().all(|c| c.improvement_pct == Some(0.0)));
    let md = run(f.args(
        "compare",
        &["--strategies", "single,single", "--format", "md"],
    ))
    .1;
    assert!(md.contains("| 0.00 |"));
}

#[test]
fn compare_dual_improves_on_random_instances() {
    let f = Fixture::random(12, 10);
    let (_, out, _) = run(f.args("compare", &["--strategies", "single,dual-sample"]));
    let r = report(&out);
    assert!(r.comparison[1].improvement_pct.unwrap() > 0.0);
}

#[test]
fn compare_with_no_instances_fails() {
    let f = Fixture::random(13, 2);
    std::fs::write(&f.input, "").unwrap();
    assert_eq!(run(f.args("compare", &[])).0, EXIT_ERROR);
    let f = Fixture::random(13, 2);
    assert_eq!(run(f.args("compare", &["--count", "0"])).0, EXIT_ERROR);
}

fn binary(f: &Fixture, args: &[&str], threads: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualcert"));
    cmd.args(&f.args("verify", args)[1..]);
    match threads {
        Some(t) => cmd.env("DUALCERT_THREADS", t),
        None => cmd.env_remove("DUALCERT_THREADS"),
    };
    cmd.output().unwrap()
}

#[test]
fn binary_exit_codes_and_thread_cap() {
    let f = Fixture::threshold();
    assert_eq!(binary(&f, &["--eps", "0"], None).status.code(), Some(0));
    assert_eq!(
        binary(&f, &["--eps", "0"], Some("1")).status.code(),
        Some(0)
    );
    assert_eq!(
        binary(&f, &["--eps", "2"], Some("2")).status.code(),
        Some(3)
    );
    let bad = binary(&f, &["--eps", "0"], Some("zero"));
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("DUALCERT_THREADS"));
}
