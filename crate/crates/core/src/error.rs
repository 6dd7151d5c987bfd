use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A memory or size cap would be exceeded.
    #[error("resource error: {0}")]
    Resource(String),
    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Failure reading or writing artifacts.
    #[error("io error: {0}")]
    Io(String),
    /// Broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
