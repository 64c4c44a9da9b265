use thiserror::Error;

/// Errors surfaced by environment construction, solvers and learners.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration (bad grid cell, missing annotation, bad density).
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape or dimension mismatch between inputs.
    #[error("structural error: {0}")]
    Structural(String),

    /// Non-finite values where finite numbers are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Fixed-point iteration ran out of sweeps.
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Attempt to advance an episode that has already terminated.
    #[error("episode already terminated at t={t}")]
    EpisodeTerminated { t: usize },

    /// An agent callback produced an action outside the action set.
    #[error("invalid action {action} at step {step}")]
    InvalidAction { step: usize, action: usize },

    /// Operation requires a deterministic system or other unsupported input.
    #[error("unsupported input: {0}")]
    Unsupported(String),

    /// Estimator has no informative data (e.g. all rewards zero).
    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
