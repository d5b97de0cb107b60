//! Crate error type.

use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped by what the caller can do about them: `Config`
/// for bad parameters or unparsable configuration, `Data` for inputs
/// that violate a documented precondition, `Shape` for dimension
/// mismatches between arrays/models, and `Missing` for absent
/// prerequisites (files, subjects, cached masks).
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing prerequisite: {0}")]
    Missing(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn missing(msg: impl Into<String>) -> Self {
        Error::Missing(msg.into())
    }
}
