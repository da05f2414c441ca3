use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {version} at offset {offset}")]
    UnsupportedVersion { version: u32, offset: usize },

    #[error("truncated stream: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{count} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, count: usize },

    #[error("malformed data at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },

    #[error("invalid checkpoint kind byte {kind} at offset {offset}")]
    InvalidKind { kind: u8, offset: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subset selection is empty: {0}")]
    EmptySelection(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("bundle has no spatial maps; re-export the features with spatial data enabled")]
    NoSpatialMaps,

    #[error("image {0} is not a misclassification (inferred label equals true label)")]
    NotMisclassified(usize),

    #[error("checkpoint kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
