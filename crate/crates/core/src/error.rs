use thiserror::Error;

use crate::rate_fn::RateResult;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A solver produced a non-finite state.
    #[error("{solver} diverged at time step {step}")]
    Divergence { solver: &'static str, step: usize },

    /// The least-norm control iteration hit its budget before reaching the
    /// requested residual. The best iterate found is attached.
    #[error("least-norm control did not converge: residual {residual:e} after {iterations} iterations")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        best: Box<RateResult>,
    },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("study aborted: {diverged} of {replicas} replicas diverged at epsilon={epsilon}")]
    TooManyDivergent {
        epsilon: f64,
        diverged: usize,
        replicas: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
