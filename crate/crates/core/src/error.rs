use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the certifier. Layer numbers in messages are 1-based,
/// matching the order of `layers` in the network file.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed network file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("unsupported network format `{0}` (expected `dualcert-net-v1`)")]
    Format(String),

    #[error("layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("layer {layer}: unknown activation `{name}`")]
    UnknownActivation { layer: usize, name: String },

    #[error("layer {layer}: non-finite {what}")]
    NonFinite { layer: usize, what: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("no sign change of the tangent defect on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("invalid input region: {0}")]
    Region(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("instance file {}: {detail}", path.display())]
    Instances { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
