use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or spec violates its documented invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor extents do not line up for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An API was called outside its contract (e.g. backward on a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),

    /// A file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Training produced a NaN/Inf loss; the offending batch was dumped.
    #[error("non-finite {term} at iteration {iter} (batch dumped to {})", dump.display())]
    NonFinite {
        term: String,
        iter: usize,
        dump: PathBuf,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
