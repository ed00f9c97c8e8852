use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum GateError {
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("normalization failed: {0}")]
    Normalization(String),
    #[error("augmentation infeasible: {0}")]
    AugmentationInfeasible(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("invalid label: {0}")]
    Label(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("incompatible artifact: {0}")]
    Incompatible(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl GateError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        GateError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GateError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, GateError>;
