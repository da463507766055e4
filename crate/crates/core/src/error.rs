use thiserror::Error;

/// Errors produced by the value-prediction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An evaluation policy does not cover a state that appears in the batch.
    #[error("evaluation policy does not cover visited state {state}")]
    MissingPolicyState { state: usize },

    /// Iterative solver or learner failed to settle.
    #[error("divergence: {reason} (residual {residual:e} after {iterations} iterations)")]
    Divergence {
        reason: String,
        residual: f64,
        iterations: usize,
        /// Per-iteration max-norm change, when the caller asked for it.
        trace: Vec<f64>,
    },

    #[error("singular system: condition estimate {condition:e}")]
    Singular { condition: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
