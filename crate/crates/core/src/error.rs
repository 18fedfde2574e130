use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system: pivot {pivot:.3e} at column {column} is below threshold {threshold:.3e}")]
    SingularSystem {
        column: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient data: requested {requested} points, only {available} available")]
    InsufficientData { requested: usize, available: usize },

    #[error("parse error at row {row}, column {col}: {message}")]
    ParseError {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown function {0:?} (expected f1, f2 or f3)")]
    UnknownFunction(String),

    #[error("labels are all equal; R² is undefined")]
    DegenerateLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn dim_mismatch(msg: impl Into<String>) -> LabError {
    LabError::DimensionMismatch(msg.into())
}
