use thiserror::Error;

/// Crate-wide error type. The CLI maps `Validation` to exit code 1,
/// `Numeric` to 2 and `Usage` to 64.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model or parameters: {0}")]
    Validation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
