//! Versioned, machine-readable reports and their JSON, CSV and Markdown
//! renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::verifier::{mean, median, LabelMargin, VerifyStatus};

pub const SCHEMA: &str = "dualcert-report-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            _ => Err(Error::Config(format!(
                "unknown format `{s}` (expected json, csv or md)"
            ))),
        }
    }
}

/// Echo of the settings a report was produced with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    pub falsify: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<(f64, f64)>,
    pub first_index: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub misclassified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_cap: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<VerifyStatus>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub margins: Vec<LabelMargin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

impl Row {
    pub fn new(index: usize, label: usize, predicted: usize) -> Self {
        Self {
            index,
            label,
            predicted,
            misclassified: label != predicted,
            epsilon: None,
            iterations: None,
            at_cap: None,
            status: None,
            margins: Vec::new(),
            counterexample: None,
            runtime_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub certified: usize,
    pub misclassified: Vec<usize>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_runtime_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_mean_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_half_range_ms: Option<f64>,
}

impl Aggregates {
    /// Recomputes every aggregate from the rows alone.
    pub fn from_rows(rows: &[Row]) -> Self {
        let bounds: Vec<f64> = rows
            .iter()
            .filter(|r| !r.misclassified)
            .filter_map(|r| r.epsilon)
            .collect();
        let times: Vec<f64> = rows.iter().filter_map(|r| r.runtime_ms).collect();
        let (runtime_mean_ms, runtime_half_range_ms) = spread(&times);
        Self {
            certified: bounds.len(),
            misclassified: rows
                .iter()
                .filter(|r| r.misclassified)
                .map(|r| r.index)
                .collect(),
            mean: mean(&bounds),
            median: median(&bounds),
            total_runtime_ms: (!times.is_empty()).then(|| times.iter().sum()),
            runtime_mean_ms,
            runtime_half_range_ms,
        }
    }
}

/// Mean and half of the range, the `t ± e` form used for runtimes.
pub fn spread(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean(values), Some(0.5 * (hi - lo)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub mean_bound: Option<f64>,
    pub median_bound: Option<f64>,
    /// `(mean / mean_single - 1) * 100`, two decimals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_mean_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_half_range_ms: Option<f64>,
}

pub fn improvement_pct(bound: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0).then(|| ((bound / baseline - 1.0) * 100.0 * 100.0).round() / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronBounds {
    pub layer: usize,
    pub neuron: usize,
    pub l_over: f64,
    pub u_over: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_under: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_under: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub tool_version: String,
    pub command: String,
    pub config: ConfigEcho,
    #[serde(default)]
    pub rows: Vec<Row>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregates: Option<Aggregates>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparison: Vec<ComparisonRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<NeuronBounds>,
}

impl Report {
    pub fn new(command: &str, config: ConfigEcho) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            rows: Vec::new(),
            aggregates: None,
            comparison: Vec::new(),
            bounds: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema != SCHEMA {
            return Err(Error::Format(format!(
                "unsupported report schema `{}`",
                report.schema
            )));
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(self).expect("reports contain only finite numbers");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => Ok(self.to_json()),
            Format::Csv => self.to_csv(),
            Format::Markdown => Ok(self.to_markdown()),
        }
    }

    fn table(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        if !self.bounds.is_empty() {
            let header = vec!["layer", "neuron", "l_over", "u_over", "l_under", "u_under"];
            let body = self
                .bounds
                .iter()
                .map(|b| {
                    vec![
                        b.layer.to_string(),
                        b.neuron.to_string(),
                        fmt_g(b.l_over),
                        fmt_g(b.u_over),
                        opt(b.l_under),
                        opt(b.u_under),
                    ]
                })
                .collect();
            return (header, body);
        }
        if !self.comparison.is_empty() {
            let header = vec![
                "strategy",
                "mean_bound",
                "median_bound",
                "improvement_pct",
                "runtime_mean_ms",
                "runtime_half_range_ms",
            ];
            let body = self
                .comparison
                .iter()
                .map(|c| {
                    vec![
                        c.strategy.clone(),
                        opt(c.mean_bound),
                        opt(c.median_bound),
                        c.improvement_pct
                            .map(|p| format!("{p:.2}"))
                            .unwrap_or_default(),
                        opt(c.runtime_mean_ms),
                        opt(c.runtime_half_range_ms),
                    ]
                })
                .collect();
            return (header, body);
        }
        let header = vec![
            "index",
            "label",
            "predicted",
            "misclassified",
            "status",
            "epsilon",
            "iterations",
            "at_cap",
            "margins",
            "counterexample",
            "runtime_ms",
        ];
        let body = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.index.to_string(),
                    r.label.to_string(),
                    r.predicted.to_string(),
                    r.misclassified.to_string(),
                    r.status.map(|s| s.to_string()).unwrap_or_default(),
                    opt(r.epsilon),
                    r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                    r.at_cap.map(|b| b.to_string()).unwrap_or_default(),
                    r.margins
                        .iter()
                        .map(|m| format!("{}:{}", m.label, fmt_g(m.lower_bound)))
                        .collect::<Vec<_>>()
                        .join(";"),
                    r.counterexample
                        .as_ref()
                        .map(|x| x.iter().map(|v| fmt_g(*v)).collect::<Vec<_>>().join(";"))
                        .unwrap_or_default(),
                    opt(r.runtime_ms),
                ]
            })
            .collect();
        (header, body)
    }

    pub fn to_csv(&self) -> Result<String> {
        let (header, body) = self.table();
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for row in &body {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("# dualcert {} report\n\n", self.command);
        let _ = writeln!(s, "- tool version: {}", self.tool_version);
        let c = &self.config;
        let _ = writeln!(s, "- model: `{}`", c.model);
        let _ = writeln!(s, "- input: `{}`", c.input);
        if let Some(st) = &c.strategy {
            let _ = writeln!(s, "- strategy: {st}");
        }
        if !c.strategies.is_empty() {
            let _ = writeln!(s, "- strategies: {}", c.strategies.join(", "));
        }
        let _ = writeln!(
            s,
            "- samples: {}, step: {}, seed: {}",
            c.samples,
            fmt_g(c.step),
            c.seed
        );
        if let Some(e) = c.eps {
            let _ = writeln!(s, "- eps: {}", fmt_g(e));
        }
        if let Some(e) = c.eps_max {
            let _ = writeln!(s, "- eps max: {}", fmt_g(e));
        }
        s.push('\n');

        let (header, body) = self.table();
        let _ = writeln!(s, "| {} |", header.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
        for row in body {
            let _ = writeln!(s, "| {} |", row.join(" | "));
        }

        if let Some(a) = &self.aggregates {
            s.push('\n');
            let _ = writeln!(s, "- certified instances: {}", a.certified);
            if !a.misclassified.is_empty() {
                let idx: Vec<String> = a.misclassified.iter().map(|i| i.to_string()).collect();
                let _ = writeln!(s, "- misclassified: {}", idx.join(", "));
            }
            let _ = writeln!(s, "- mean bound: {}", opt_or_dash(a.mean));
            let _ = writeln!(s, "- median bound: {}", opt_or_dash(a.median));
            if let (Some(m), Some(e)) = (a.runtime_mean_ms, a.runtime_half_range_ms) {
                let _ = writeln!(s, "- runtime: {} ± {} ms", fmt_g(m), fmt_g(e));
            }
        }
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g).unwrap_or_default()
}

fn opt_or_dash(v: Option<f64>) -> String {
    v.map(fmt_g).unwrap_or_else(|| "-".into())
}

/// Six significant digits in the style of C's `%g`.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci
        .split_once('e')
        .expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> Report {
        let mut r = Report::new("certify", ConfigEcho::default());
        let mut a = Row::new(0, 1, 1);
        a.epsilon = Some(0.012345678912345);
        a.iterations = Some(17);
        a.at_cap = Some(false);
        a.runtime_ms = Some(4.0);
        let mut b = Row::new(1, 0, 2);
        b.runtime_ms = Some(2.0);
        r.rows = vec![a, b];
        r.aggregates = Some(Aggregates::from_rows(&r.rows));
        r
    }

    #[test]
    fn g_formatting() {
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(0.1), "0.1");
        assert_eq!(fmt_g(123456.0), "123456");
        assert_eq!(fmt_g(1234567.0), "1.23457e+06");
        assert_eq!(fmt_g(0.0001), "0.0001");
        assert_eq!(fmt_g(0.00001234567), "1.23457e-05");
        assert_eq!(fmt_g(-2.5), "-2.5");
        assert_eq!(fmt_g(0.012345678912345), "0.0123457");
        assert_eq!(fmt_g(999999.5), "1e+06");
    }

    #[test]
    fn aggregates_skip_misclassified() {
        let r = sample_report();
        let a = r.aggregates.unwrap();
        assert_eq!(a.certified, 1);
        assert_eq!(a.misclassified, vec![1]);
        assert_eq!(a.mean, Some(0.012345678912345));
        assert_eq!(a.total_runtime_ms, Some(6.0));
        assert_eq!(a.runtime_mean_ms, Some(3.0));
        assert_eq!(a.runtime_half_range_ms, Some(1.0));
    }

    #[test]
    fn json_round_trip() {
        let r = sample_report();
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(Aggregates::from_rows(&back.rows), back.aggregates.unwrap());
        assert!(Report::from_json(&r.to_json().replace(SCHEMA, "other")).is_err());
    }

    #[test]
    fn formats_agree_on_numbers() {
        let r = sample_report();
        let csv = r.to_csv().unwrap();
        let md = r.to_markdown();
        assert!(csv.starts_with("index,label,predicted"));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("0.0123457"));
        assert!(md.contains("| 0.0123457 |"));
        assert!(md.contains("misclassified: 1"));
    }

    #[test]
    fn improvement() {
        assert_eq!(improvement_pct(1.0, 1.0), Some(0.0));
        assert_eq!(improvement_pct(1.712_24, 1.0), Some(71.22));
        assert_eq!(improvement_pct(1.0, 0.0), None);
    }
}
