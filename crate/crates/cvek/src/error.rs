//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by kernel construction, model fitting, and testing.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (dimension mismatches, non-finite values, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A kernel specification string or hyperparameter is invalid.
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),

    /// A matrix factorization failed (singular or badly conditioned system).
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// The variance-component optimizer stopped without meeting its
    /// convergence tolerance; the message records the best iterate found.
    #[error("null-model fit did not converge: {0}")]
    FitNonConvergence(String),

    /// The nuisance information block could not be inverted.
    #[error("information matrix error: {0}")]
    Information(String),

    /// A reference-distribution quantity (scale or degrees of freedom) is
    /// outside its valid domain.
    #[error("distribution error: {0}")]
    Distribution(String),

    /// Kernel hyperparameter tuning failed to produce a usable value.
    #[error("tuning error: {0}")]
    Tuning(String),

    /// The inputs are degenerate for the requested operation (zero kernel,
    /// constant response, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An unknown strategy tag or invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A simulation scenario failed (for example, too many replicate failures).
    #[error("simulation error: {0}")]
    Simulation(String),
}

impl Error {
    /// Wraps the error with a label describing the pipeline step that failed.
    pub fn at_step(self, step: &str) -> Error {
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{step}: {m}")),
            Error::InvalidSpec(m) => Error::InvalidSpec(format!("{step}: {m}")),
            Error::Factorization(m) => Error::Factorization(format!("{step}: {m}")),
            Error::FitNonConvergence(m) => Error::FitNonConvergence(format!("{step}: {m}")),
            Error::Information(m) => Error::Information(format!("{step}: {m}")),
            Error::Distribution(m) => Error::Distribution(format!("{step}: {m}")),
            Error::Tuning(m) => Error::Tuning(format!("{step}: {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("{step}: {m}")),
            Error::Config(m) => Error::Config(format!("{step}: {m}")),
            Error::Simulation(m) => Error::Simulation(format!("{step}: {m}")),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
