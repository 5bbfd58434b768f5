//! The `dualcert` command-line front end.
//!
//! Exit codes: 0 success (or robust), 2 unknown, 3 falsified, 1 usage or I/O
//! error. `DUALCERT_THREADS` caps the number of worker threads.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::model::{load_instances, Instance, Network};
use crate::report::{
    improvement_pct, spread, Aggregates, ComparisonRow, ConfigEcho, Format, NeuronBounds, Report,
    Row,
};
use crate::underapprox::UnderConfig;
use crate::verifier::{
    analyze, certify_dataset, verify_at, Strategy, VerifierConfig, VerifyStatus,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_FALSIFIED: i32 = 3;

pub const THREADS_VAR: &str = "DUALCERT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "dualcert",
    version,
    about = "Certified robustness radii for S-curve networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check robustness of one instance at a fixed radius.
    Verify(VerifyArgs),
    /// Search the largest certified radius for a range of instances.
    Certify(CertifyArgs),
    /// Dump per-neuron pre-activation domains for one instance.
    Bounds(BoundsArgs),
    /// Compare mean certified radii across strategies.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Network file (dualcert-net-v1 JSON).
    #[arg(long)]
    model: PathBuf,
    /// Headerless CSV: label followed by features.
    #[arg(long)]
    input: PathBuf,
    /// Zero-based index of the (first) instance.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Samples for the sampling under-approximation.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Gradient step as a fraction of the radius.
    #[arg(long, default_value_t = 0.45)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict every input coordinate to [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    clamp: Option<Vec<f64>>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: Format,
    /// Include wall-clock runtimes (reports are then not reproducible byte for byte).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 1.0)]
    eps_max: f64,
    /// Relative width at which the radius search stops.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value = "dual-sample", value_parser = parse_strategy)]
    strategy: Strategy,
    /// Skip the counterexample search.
    #[arg(long)]
    no_falsify: bool,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value = "dual-sample", value_parser = parse_strategy)]
    strategy: Strategy,
    /// Number of instances starting at --index (default: all remaining).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    no_falsify: bool,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value = "dual-sample", value_parser = parse_strategy)]
    strategy: Strategy,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    search: SearchArgs,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "single,dual-sample,dual-grad,dual-both", value_parser = parse_strategy)]
    strategies: Vec<Strategy>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    no_falsify: bool,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

type CliResult<T> = std::result::Result<T, String>;

fn load_model(path: &Path) -> CliResult<Network> {
    Network::load(path).map_err(|e| match e {
        Error::Io { .. } => e.to_string(),
        other => format!("{}: {other}", path.display()),
    })
}

fn load_range(path: &Path, first: usize, count: Option<usize>) -> CliResult<Vec<Instance>> {
    let all = load_instances(path).map_err(|e| e.to_string())?;
    if first >= all.len() {
        return Err(format!(
            "{}: instance index {first} out of range ({} instances)",
            path.display(),
            all.len()
        ));
    }
    let end = count.map_or(all.len(), |c| (first + c).min(all.len()));
    let picked = all[first..end].to_vec();
    if picked.is_empty() {
        return Err(format!("{}: empty instance set", path.display()));
    }
    Ok(picked)
}

impl Common {
    fn config(&self, strategy: Strategy, falsify: bool) -> CliResult<VerifierConfig> {
        let clamp = match self.clamp.as_deref() {
            Some([lo, hi]) => Some((*lo, *hi)),
            _ => None,
        };
        let cfg = VerifierConfig {
            strategy,
            under: UnderConfig {
                n_samples: self.samples,
                step_fraction: self.step,
                seed: self.seed,
            },
            falsify,
            clamp,
            ..VerifierConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            model: self.model.display().to_string(),
            input: self.input.display().to_string(),
            samples: self.samples,
            step: self.step,
            seed: self.seed,
            clamp: self.clamp.as_deref().map(|c| (c[0], c[1])),
            first_index: self.index,
            count: 1,
            ..ConfigEcho::default()
        }
    }

    fn emit(&self, report: &Report, stdout: &mut dyn Write) -> CliResult<()> {
        let text = report.render(self.format).map_err(|e| e.to_string())?;
        match &self.out {
            Some(path) => {
                fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
            }
            None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
        }
    }
}

impl SearchArgs {
    fn apply(&self, cfg: VerifierConfig) -> CliResult<VerifierConfig> {
        let cfg = VerifierConfig {
            eps_max: self.eps_max,
            search_tol: self.tol,
            max_search_iters: self.max_iters,
            ..cfg
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn echo(&self, echo: &mut ConfigEcho) {
        echo.eps_max = Some(self.eps_max);
        echo.tol = Some(self.tol);
        echo.max_iters = Some(self.max_iters);
    }
}

fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let c = &args.common;
    let net = load_model(&c.model)?;
    let inst = load_range(&c.input, c.index, Some(1))?.remove(0);
    let cfg = c.config(args.strategy, !args.no_falsify)?;
    let start = Instant::now();
    let outcome = verify_at(&net, &inst.features, args.eps, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let mut echo = c.echo();
    echo.strategy = Some(args.strategy.to_string());
    echo.eps = Some(args.eps);
    echo.falsify = cfg.falsify;
    let mut report = Report::new("verify", echo);
    let mut row = Row::new(c.index, inst.label, outcome.predicted);
    row.status = Some(outcome.status);
    row.margins = outcome.margins;
    row.counterexample = outcome.counterexample;
    row.runtime_ms = c.timing.then_some(elapsed.as_secs_f64() * 1e3);
    report.rows.push(row);
    c.emit(&report, stdout)?;
    if c.out.is_some() {
        let _ = writeln!(stdout, "{}", outcome.status);
    }
    Ok(match outcome.status {
        VerifyStatus::Robust => EXIT_OK,
        VerifyStatus::Unknown => EXIT_UNKNOWN,
        VerifyStatus::Falsified => EXIT_FALSIFIED,
    })
}

fn certify_rows(
    net: &Network,
    instances: &[Instance],
    first: usize,
    cfg: &VerifierConfig,
    timing: bool,
) -> CliResult<Vec<Row>> {
    let summary = certify_dataset(net, instances, first, cfg).map_err(|e| e.to_string())?;
    Ok(summary
        .instances
        .into_iter()
        .map(|r| {
            let mut row = Row::new(r.index, r.label, r.predicted);
            if let Some(c) = r.result {
                row.epsilon = Some(c.epsilon);
                row.iterations = Some(c.iterations);
                row.at_cap = Some(c.at_cap);
            }
            row.runtime_ms = timing.then_some(r.runtime.as_secs_f64() * 1e3);
            row
        })
        .collect())
}

fn cmd_certify(args: &CertifyArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let c = &args.common;
    let net = load_model(&c.model)?;
    let instances = load_range(&c.input, c.index, args.count)?;
    let cfg = args
        .search
        .apply(c.config(args.strategy, !args.no_falsify)?)?;

    let mut echo = c.echo();
    echo.strategy = Some(args.strategy.to_string());
    echo.falsify = cfg.falsify;
    echo.count = instances.len();
    args.search.echo(&mut echo);
    let mut report = Report::new("certify", echo);
    report.rows = certify_rows(&net, &instances, c.index, &cfg, c.timing)?;
    report.aggregates = Some(Aggregates::from_rows(&report.rows));
    c.emit(&report, stdout)?;
    Ok(EXIT_OK)
}

fn cmd_bounds(args: &BoundsArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let c = &args.common;
    let net = load_model(&c.model)?;
    let inst = load_range(&c.input, c.index, Some(1))?.remove(0);
    let cfg = c.config(args.strategy, false)?;
    if inst.features.len() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: inst.features.len(),
        }
        .to_string());
    }
    let mut region = crate::model::InputRegion::new(inst.features.clone(), args.eps)
        .map_err(|e| e.to_string())?;
    if let Some((lo, hi)) = cfg.clamp {
        region = region.with_clamp(lo, hi).map_err(|e| e.to_string())?;
    }
    let analysis = analyze(&net, &region, &cfg, None).map_err(|e| e.to_string())?;

    let mut echo = c.echo();
    echo.strategy = Some(args.strategy.to_string());
    echo.eps = Some(args.eps);
    let mut report = Report::new("bounds", echo);
    let predicted = net.predict(&inst.features).map_err(|e| e.to_string())?;
    report.rows.push(Row::new(c.index, inst.label, predicted));
    let lb = &analysis.bounds;
    for (i, (lower, upper)) in lb.lower.iter().zip(&lb.upper).enumerate() {
        for (r, (&l, &u)) in lower.iter().zip(upper).enumerate() {
            let nested = analysis
                .under
                .as_ref()
                .map(|ub| (ub.lower(i, r).clamp(l, u), ub.upper(i, r).clamp(l, u)));
            report.bounds.push(NeuronBounds {
                layer: i + 1,
                neuron: r,
                l_over: l,
                u_over: u,
                l_under: nested.map(|n| n.0),
                u_under: nested.map(|n| n.1),
            });
        }
    }
    c.emit(&report, stdout)?;
    Ok(EXIT_OK)
}

fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let c = &args.common;
    let net = load_model(&c.model)?;
    let instances = load_range(&c.input, c.index, args.count)?;
    if args.strategies.is_empty() {
        return Err("no strategies given".into());
    }
    let base = args
        .search
        .apply(c.config(Strategy::Single, !args.no_falsify)?)?;

    let mut means = Vec::new();
    let mut table = Vec::new();
    for &strategy in &args.strategies {
        let rows = certify_rows(
            &net,
            &instances,
            c.index,
            &base.with_strategy(strategy),
            c.timing,
        )?;
        let agg = Aggregates::from_rows(&rows);
        let times: Vec<f64> = rows.iter().filter_map(|r| r.runtime_ms).collect();
        let (runtime_mean_ms, runtime_half_range_ms) = spread(&times);
        means.push((strategy, agg.mean));
        table.push(ComparisonRow {
            strategy: strategy.to_string(),
            mean_bound: agg.mean,
            median_bound: agg.median,
            improvement_pct: None,
            runtime_mean_ms,
            runtime_half_range_ms,
        });
    }
    let baseline = match means.iter().find(|(s, _)| *s == Strategy::Single) {
        Some((_, m)) => *m,
        None => {
            let rows = certify_rows(&net, &instances, c.index, &base, false)?;
            Aggregates::from_rows(&rows).mean
        }
    };
    for row in &mut table {
        row.improvement_pct = match (row.mean_bound, baseline) {
            (Some(m), Some(b)) => improvement_pct(m, b),
            _ => None,
        };
    }

    let mut echo = c.echo();
    echo.strategies = args.strategies.iter().map(|s| s.to_string()).collect();
    echo.falsify = base.falsify;
    echo.count = instances.len();
    args.search.echo(&mut echo);
    let mut report = Report::new("compare", echo);
    report.comparison = table;
    c.emit(&report, stdout)?;
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> CliResult<i32> {
    match &cli.command {
        Command::Verify(a) => cmd_verify(a, stdout),
        Command::Certify(a) => cmd_certify(a, stdout),
        Command::Bounds(a) => cmd_bounds(a, stdout),
        Command::Compare(a) => cmd_compare(a, stdout),
    }
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!(
                "{THREADS_VAR} must be a positive integer, got `{v}`"
            )),
        },
        Err(_) => Ok(None),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    EXIT_ERROR
                }
            };
        }
    };
    let mut buffer = Vec::new();
    let result = thread_cap().and_then(|cap| match cap {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| e.to_string())?;
            pool.install(|| dispatch(&cli, &mut buffer))
        }
        None => dispatch(&cli, &mut buffer),
    });
    let _ = stdout.write_all(&buffer);
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_ERROR
        }
    }
}

pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
