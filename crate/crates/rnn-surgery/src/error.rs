use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum SurgeryError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("integer overflow guard: {0}")]
    Overflow(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SurgeryError>;
