//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad ratio, non-dividing row width, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Dimension or index disagreement between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller violated an operation precondition.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// A dataset file could not be ingested; names the file and line.
    #[error("ingestion error in {file}:{line}: {message}")]
    Ingest {
        file: String,
        line: usize,
        message: String,
    },

    /// Non-finite value produced or encountered where finite math is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
