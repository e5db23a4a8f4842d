use thiserror::Error;

use crate::channel::Link;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("width mismatch: {0}")]
    Width(String),

    #[error("template has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("registration failed: {0}")]
    Registration(String),

    #[error("tag is in phase {found}, operation requires {expected}")]
    Phase {
        expected: &'static str,
        found: &'static str,
    },

    #[error("adversary cannot be installed on secure link {0:?}")]
    AdversaryOnSecureLink(Link),

    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),

    #[error("protocol `{0}` is reference data only and cannot be executed")]
    NotExecutable(String),

    #[error("{0}")]
    Precondition(String),

    #[error("protocol spec parse error at line {line}: {message}")]
    SpecParse { line: usize, message: String },
}

impl Error {
    pub(crate) fn width(msg: impl Into<String>) -> Self {
        Error::Width(msg.into())
    }
}
