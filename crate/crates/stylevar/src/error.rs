//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A value violated an operation's preconditions (non-finite input,
    /// shape mismatch, out-of-range parameter).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Bad or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training diverged or could not run.
    #[error("training error: {0}")]
    Training(String),

    /// An iterative optimization produced a non-finite loss. The score
    /// trajectory up to the failure is attached for post-mortems.
    #[error("optimization error at step {step}: {message}")]
    Optimization {
        step: usize,
        message: String,
        trajectory: Vec<f64>,
    },

    /// A metered detector ran out of query budget.
    #[error("query budget exhausted: {used} of {budget} queries used")]
    QueryBudget { used: u64, budget: u64 },

    /// A white-box code path was handed a detector without gradients.
    #[error("detector does not expose gradients")]
    GradientUnavailable,

    /// External scoring adapter failure (network, HTTP, or parse).
    #[error("adapter error: {0}")]
    Adapter(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
