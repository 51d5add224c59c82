use thiserror::Error;

/// Errors surfaced by the forge library.
#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty sample bank")]
    EmptyBank,

    #[error("surrogate has not been fitted")]
    Unfitted,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ForgeError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ForgeError::Config(msg.into()))
}
