use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,
    #[error("insufficient density: every bin holds fewer than {min_samples} samples")]
    InsufficientDensity { min_samples: usize },
    #[error("degenerate labels: both matched and unmatched samples are required")]
    DegenerateLabels,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mixed coordinate conventions: pixel and relative boxes in one dataset")]
    MixedCoordinates,
    #[error("matrix is not positive definite{0}")]
    NotPositiveDefinite(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
