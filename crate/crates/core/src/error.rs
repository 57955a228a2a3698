//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector shapes do not line up; the message names both shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An index (token target, epoch, head) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A computation produced or encountered a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An operation was called on an object in the wrong state.
    #[error("invalid state: {0}")]
    State(String),

    /// A token string or id is unknown to the vocabulary.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// A sequence does not fit in the model context window.
    #[error("context length exceeded: {0}")]
    Context(String),

    /// An input collection is empty or otherwise unusable.
    #[error("invalid input: {0}")]
    Input(String),

    /// A persisted artifact is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
