use thiserror::Error;

/// Failure categories shared by every module.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("scalar mode mismatch: {0} vs {1}")]
    ModeMismatch(String, String),
    #[error("depth exceeded: {0}")]
    DepthExceeded(String),
    #[error("degree cutoff exceeded: {0}")]
    CutoffExceeded(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
