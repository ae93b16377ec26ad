//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: have {have}, need at least {need}")]
    InsufficientPoints { have: usize, need: usize },

    #[error("invalid coordinates: non-finite value at point {index}")]
    InvalidCoordinates { index: usize },

    #[error("insufficient points after sampling: {have} < {need}")]
    InsufficientAfterSampling { have: usize, need: usize },

    #[error("invalid scale: {0} (must be > 0)")]
    InvalidScale(f64),

    #[error("decimation removed all points")]
    DecimationEmpty,

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("feature row count {rows} does not match point count {points}")]
    FeatureRowMismatch { rows: usize, points: usize },

    #[error("numeric overflow: non-finite value in {0}")]
    NumericOverflow(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing pretrained checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
