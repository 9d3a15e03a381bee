//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, simulation, training, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A value or combination of values violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Array or region-count dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A scenario/config file is malformed or incomplete.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint or cache file does not match what the caller expects
    /// (wrong version, wrong config digest, corrupted layout).
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    /// Training diverged persistently and was stopped.
    #[error("solver aborted: {0}")]
    SolverAbort(String),

    /// A verification suite reported failures.
    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand used throughout validation code.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
