//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver failed to reach its tolerance.
    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    /// A sampled or computed quantity violated a model identity
    /// (e.g. a transition probability outside [0, 1]).
    #[error("model consistency violation: {0}")]
    ModelConsistency(String),

    /// A moment requested at the boundary of convergence diverges.
    #[error("divergent moment: {0}")]
    DivergentMoment(String),

    /// A direct invasion run drew a child count above the configured cap.
    #[error("offspring draw exceeded cap {cap} at step {step}; run truncated")]
    CappedRun { cap: u64, step: usize },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialisation error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::ModelConsistency(_) | Error::DivergentMoment(_) => 3,
            Error::CappedRun { .. } => 4,
            _ => 1,
        }
    }
}
