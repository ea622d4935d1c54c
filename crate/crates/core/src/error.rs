//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("duplicate character in dictionary: {0:?}")]
    DuplicateChar(char),

    #[error("similarity threshold must lie in [0,1], got {0}")]
    InvalidThreshold(f64),

    #[error("character {0:?} is not in the repository")]
    UnknownChar(char),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("sentence is empty")]
    EmptySentence,

    #[error("neighbor set of {0:?} has zero total frequency")]
    ZeroTotalFrequency(char),

    #[error("no base vector for character {0:?}")]
    MissingBaseVector(char),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("embedding row {0} has zero norm")]
    ZeroVector(usize),

    #[error("no anchor in the batch has a same-class positive")]
    NoValidAnchors,

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("corpus contains only one class")]
    SingleClassCorpus,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("augmentation client error: {0}")]
    Client(String),

    #[error("no parsable lines in augmentation response")]
    NoParsableLines,

    #[error("training aborted: {0}")]
    TrainingAborted(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
