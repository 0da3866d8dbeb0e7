//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{what}: index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("malformed RLE mask: runs sum to {got}, expected {expected} for {height}x{width}")]
    MalformedRle {
        got: usize,
        expected: usize,
        height: usize,
        width: usize,
    },

    #[error("region mask has no foreground pixels; region cannot be grounded")]
    EmptyRegion,

    #[error("empty index set: {0}")]
    EmptyIndexSet(&'static str),

    #[error("placeholder injection: expected {expected} placeholders, found {found}")]
    PlaceholderMismatch { expected: usize, found: usize },

    #[error("sequence of length {len} exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("cross-entropy target is all padding; mean loss undefined")]
    AllPadTarget,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cache miss: sample id {0:?} not present")]
    CacheMiss(String),

    #[error("checkpoint parameter {name:?}: shape {got:?} does not match config shape {expected:?}")]
    CheckpointShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("scoring: {0}")]
    Scoring(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
