use thiserror::Error;

/// Errors produced by the coreset-selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("cannot split class `{class}`: {reason}")]
    Split { class: String, reason: String },
    #[error("invalid mixture spec: {0}")]
    Spec(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("silhouette is undefined for a single cluster")]
    SilhouetteUndefined,
    #[error("requested {requested} samples but only {available} are available")]
    Size { requested: usize, available: usize },
    #[error("inconsistent clustering: {0}")]
    Consistency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
