//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector that should represent an embedding has zero norm. This is
    /// the signature of an untrained or collapsed extractor and makes
    /// cosine similarity undefined.
    #[error("degenerate embedding: zero-norm vector")]
    DegenerateEmbedding,

    #[error("label index {label} out of range for {classes} classes")]
    LabelError { label: usize, classes: usize },

    #[error("numerics error: {0}")]
    NumericsError(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error("data error: {0}")]
    DataError(String),

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("dataset error: {0}")]
    DatasetError(String),

    #[error("protocol error: {0}")]
    ProtocolError(String),

    /// An axis whose interquartile range is zero cannot be scaled.
    #[error("degenerate axis {axis}: interquartile range is zero")]
    DegenerateAxis { axis: usize },

    #[error("metrics error: {0}")]
    MetricsError(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint tensor `{tensor}` has shape {found:?}, expected {expected:?}")]
    CheckpointShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
