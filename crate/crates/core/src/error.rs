use std::io;

use thiserror::Error;

/// Errors raised across the cohort, feature, model and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid encounter {id}: {reason}")]
    InvalidEncounter { id: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing modality: {0}")]
    MissingModality(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("invalid embedding dimension {0}")]
    InvalidDim(u32),

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("unresolvable embedding key {0:?}")]
    UnresolvedEmbedding(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("imputation statistics have not been fitted")]
    UnfittedStats,

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("single-class data in {0}")]
    SingleClass(&'static str),

    #[error("encounter {0:?} appears in more than one split")]
    SplitLeakage(String),

    #[error("no positive labels in validation data")]
    NoPositives,

    #[error("missing threshold provenance: {0}")]
    MissingThreshold(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
