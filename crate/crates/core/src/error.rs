use thiserror::Error;

/// Errors raised by the library. Variants carry enough context to point at the
/// offending input without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside the schedule horizon (0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("training diverged at step {step} (lr = {lr}): {detail}")]
    TrainingDiverged { step: usize, lr: f64, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sampling failed at w = {w}: {source}")]
    SweepFailed {
        w: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
