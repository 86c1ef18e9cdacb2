//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced while building, fitting or evaluating a model.
#[derive(Debug, Error)]
pub enum MdlagError {
    /// An input had an empty dimension or inconsistent shape.
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    /// A configuration value was outside its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A unit had zero variance over all trials and time points.
    #[error("unit {unit} has zero variance; remove it before fitting")]
    DegenerateVariance { unit: usize },

    /// A matrix that must be positive definite could not be factorized,
    /// even after the jitter retries.
    #[error("matrix of size {size} is not positive definite after jitter retries")]
    NotPositiveDefinite { size: usize },

    /// A non-finite value appeared in the objective or in a posterior moment.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A problem size exceeded a configured resource guard.
    #[error("resource guard: {0}")]
    ResourceGuard(String),

    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A manifest could not be parsed or serialized.
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),

    /// A file was readable but its content was inconsistent.
    #[error("malformed file: {0}")]
    Format(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, MdlagError>;
