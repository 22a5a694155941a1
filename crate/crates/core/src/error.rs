use thiserror::Error;

use crate::diffusion::Sample;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid dimensions, bounds or hyperparameters supplied at construction time.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call that violates an operation's preconditions (bad timestep, stale cache, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A reward was asked to score a query it is not defined for.
    #[error("reward specification error: {0}")]
    Specification(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    /// A rollout produced a non-finite latent. The partial trajectory is kept for inspection.
    #[error("episode aborted at t={t}: {message}")]
    Episode {
        t: usize,
        message: String,
        trajectory: Vec<Sample>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn usage_err(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
