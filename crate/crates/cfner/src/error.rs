//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CfnerError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("numeric failure in {context}: {value}")]
    Numeric { context: String, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for CfnerError {
    fn from(e: serde_json::Error) -> Self {
        CfnerError::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CfnerError>;
