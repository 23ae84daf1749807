use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("time {t} outside trajectory domain [0, {total}]")]
    OutOfDomain { t: f64, total: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corridor generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("corridor too large: {faces} faces exceeds limit {limit}")]
    OversizeCorridor { faces: usize, limit: usize },
    #[error("sequence of {len} corridors exceeds limit {limit}")]
    OversizeSequence { len: usize, limit: usize },
    #[error("KKT matrix singular after regularization (condition estimate {condition:e})")]
    SingularKkt { condition: f64 },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
