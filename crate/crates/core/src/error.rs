use thiserror::Error;

/// Errors produced by the affine BV toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("support escapes target grid; required bounding box {lower:?} .. {upper:?}")]
    SupportEscapes { lower: Vec<f64>, upper: Vec<f64> },

    #[error("oracle inconsistency: {0}")]
    OracleInconsistent(String),

    #[error("minimization failed: {0}")]
    MinimizeFailed(String),

    #[error("invalid field file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
