//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A distribution specification violates its invariants.
    #[error("invalid distribution: {0}")]
    InvalidDist(String),

    /// A model or simulation config failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Parameter vector / layout / dataset shapes disagree.
    #[error("structural error: {0}")]
    Structure(String),

    /// No finite starting point could be found.
    #[error("initialization failed: {0}")]
    InitFailed(String),

    /// The sampler could not produce draws.
    #[error("sampling failed: {0}")]
    Sampling(String),

    /// A cross-validation refit failed; the enclosing result is flagged.
    #[error("cross-validation fold {fold} failed: {reason}")]
    FoldFailed { fold: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
