use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller supplied an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// A field parsed correctly but violates a range invariant.
    #[error("validation error{}: field `{field}` {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { field: String, line: Option<u64>, message: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("storage error: {0}")]
    Storage(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    /// Input is well-formed but numerically degenerate (zero variance, constant column, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), line: None, message: message.into() }
    }
}
