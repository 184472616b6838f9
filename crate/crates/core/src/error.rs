use thiserror::Error;

/// Errors surfaced by the simulation lab.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that break an operation's contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// A numeric argument is outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),
    /// A stateful party was driven out of order.
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    /// A party in the privacy game broke the message protocol.
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn lifecycle(msg: impl Into<String>) -> Error {
    Error::Lifecycle(msg.into())
}

pub(crate) fn protocol(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}
