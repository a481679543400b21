//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input vector or matrix has the wrong dimensions.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid configuration or argument value.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// A per-sample gradient came out non-finite while assembling a system.
    #[error("non-finite gradient at data point {index}")]
    NonFiniteGradient { index: usize },

    /// Cholesky factorization failed even after jitter escalation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Bad subset: duplicate, out-of-range, or empty index list.
    #[error("invalid selection: {0}")]
    Selection(String),

    /// A requested dense materialization exceeds the size guard.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Instance construction parameters are infeasible.
    #[error("construction failed: {0}")]
    Construction(String),

    /// Dataset ingestion failure with location information.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Bandit protocol violation (e.g. invalid arm index).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The bandit agent produced a non-finite quantity; the run is aborted.
    #[error("agent fault at round {round}: {detail}")]
    AgentFault { round: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
