use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("unsupported modulation order {0} (expected 4, 16 or 64)")]
    UnsupportedModulation(usize),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular channel: {0}")]
    SingularChannel(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid history window: expected {expected} frames, got {got}")]
    InvalidHistory { expected: usize, got: usize },

    #[error("training diverged at iteration {iteration}: {reason}")]
    TrainingDivergence { iteration: usize, reason: String },

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidDimension(msg.into()))
}
