use crate::prox::ProxResult;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller violated a precondition (bad dimensions, negative tolerance, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solver could not meet its contract. The best iterate
    /// found so far is attached so callers can still inspect it.
    #[error("convergence failure: {message}")]
    Convergence {
        message: String,
        best: Box<ProxResult>,
    },

    /// Configuration file or flag parsing problem.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
