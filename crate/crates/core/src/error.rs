use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or axes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Bad user-provided input (token ids, datasets, label sets).
    #[error("input error: {0}")]
    Input(String),

    /// Inconsistent or invalid configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A persisted artifact could not be decoded.
    #[error("corrupt artifact: {0}")]
    Corrupt(String),

    /// The operation is not valid in the current state (e.g. a tape that
    /// was already differentiated).
    #[error("invalid state: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
