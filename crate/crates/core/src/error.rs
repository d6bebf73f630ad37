//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A corpus line failed to parse; `line` is 1-based.
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    /// A precondition or invariant on an input was violated.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Model file is corrupt, truncated or structurally wrong.
    #[error("model file: {0}")]
    Model(String),

    /// Model file was written by a newer format than this build understands.
    #[error("model format version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn corpus(line: usize, msg: impl Into<String>) -> Self {
        Error::Corpus { line, msg: msg.into() }
    }
}
