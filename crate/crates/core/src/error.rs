use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}{}: {source}", offset.map(|o| format!(" at offset {o}")).unwrap_or_default())]
    Io {
        path: PathBuf,
        offset: Option<u64>,
        #[source]
        source: std::io::Error,
    },

    #[error("series length {actual} does not match expected length {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("series too short for normalization: {0} samples")]
    TooShort(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("key width mismatch: expected {expected} bits, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("input arrived out of key order at record {0}")]
    OutOfOrderInput(u64),

    #[error("timestamp {got} out of order (expected {expected})")]
    TimestampOrder { expected: u64, got: u64 },

    #[error("index is empty")]
    EmptyIndex,

    #[error("no record inside a window of {0} insertions")]
    EmptyWindow(u64),

    #[error("corrupt run {path}: {reason}")]
    CorruptRun { path: PathBuf, reason: String },

    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },

    #[error("corrupt page {page} in {path}")]
    CorruptPage { path: PathBuf, page: u64 },

    #[error("offset {offset} out of bounds for {path}")]
    OutOfBounds { path: PathBuf, offset: u64 },

    #[error("manifest error: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, offset: Option<u64>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), offset, source }
    }
}
