use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("objective returned a non-finite value at perturbation {index}")]
    NonFiniteEvaluation { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("reward batch is empty")]
    EmptyBatch,

    #[error("singular regression system: {0}")]
    Singular(String),

    #[error("query budget {budget} too small: {reason}")]
    BudgetTooSmall { budget: usize, reason: String },

    #[error("task `{0}` does not provide exact gradients")]
    NoExactGradient(String),

    #[error("rollout produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("branch {index} failed: {source}")]
    Branch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failures} of {total} items failed; first failure at index {index}: {source}")]
    ParallelItems {
        index: usize,
        failures: usize,
        total: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("worker pool: {0}")]
    Pool(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Index of the first failing item for errors raised by a parallel map or a
    /// meta-iteration branch.
    pub fn failing_index(&self) -> Option<usize> {
        match self {
            Error::Branch { index, .. } | Error::ParallelItems { index, .. } => Some(*index),
            Error::NonFiniteEvaluation { index } => Some(*index),
            _ => None,
        }
    }
}
