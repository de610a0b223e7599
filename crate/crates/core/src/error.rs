use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument or state violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input text, with the 1-based line where parsing failed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The request is valid but outside what this build supports.
    #[error("unsupported: {0}")]
    Capability(String),

    /// Checkpoint content does not match the expected model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        msg: msg.into(),
    })
}
