use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the cadre pipeline.
#[derive(Debug, Error)]
pub enum CadreError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0} is empty")]
    EmptyInput(String),

    #[error("target column `{0}` not found in header")]
    MissingColumn(String),

    #[error("column `{0}` appears more than once in header")]
    DuplicateColumn(String),

    #[error("non-numeric value {value:?} at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {required} rows, got {actual}")]
    TooFewRows { required: usize, actual: usize },

    #[error("non-finite {term} term in loss")]
    NonFiniteLoss { term: &'static str },

    #[error("training diverged at epoch {epoch}; last finite loss {last_finite_loss}")]
    Diverged { epoch: usize, last_finite_loss: f64 },

    #[error("singular linear system; use a positive ridge penalty")]
    Singular,

    #[error("feature mismatch: missing {missing:?}, unexpected {extra:?}")]
    FeatureMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
}

pub type Result<T, E = CadreError> = std::result::Result<T, E>;
