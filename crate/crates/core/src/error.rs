//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the estimation lab.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value, with the offending key where known.
    #[error("config error: {0}")]
    Config(String),

    /// Dimension or shape mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Numerical failure (non-positive-definite matrix, lost pivot, ...).
    #[error("numerical error: {0}")]
    Numerics(String),

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training diverged or was otherwise unable to proceed.
    #[error("training error: {0}")]
    Train(String),

    /// Malformed dataset, checkpoint, or bank file.
    #[error("file format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
