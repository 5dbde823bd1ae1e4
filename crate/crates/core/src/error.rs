use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A statistic or model is undefined on the given data (e.g. zero variance).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// No grammar-valid path fits the observed sequence.
    #[error("no path: {reason} (needs at least {min_frames} frames, sequence has {frames})")]
    NoPath {
        reason: String,
        min_frames: usize,
        frames: usize,
    },

    #[error("label `{0}` is not in the model vocabulary")]
    OutOfVocabulary(String),

    /// Malformed serialized data; `offset` is the byte offset where parsing failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
