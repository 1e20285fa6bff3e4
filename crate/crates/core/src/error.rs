//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape conformance failure; names both offending shapes.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("batch too small for {context}: need at least {min} rows, got {got}")]
    BatchTooSmall {
        context: &'static str,
        min: usize,
        got: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite value detected mid-computation (gradient, loss, update).
    #[error("non-finite {what} at {context}")]
    NonFinite { what: &'static str, context: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// An internal numerical self-check (counter prediction, ordering) failed.
    #[error("self-check failed: {0}")]
    SelfCheck(String),

    #[error("bad magic in {path}: expected {expected:?}, got {got:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        got: [u8; 4],
    },

    #[error("unsupported format version in {path}: expected {expected}, got {got}")]
    BadVersion {
        path: PathBuf,
        expected: u32,
        got: u32,
    },

    #[error("record {id} has {got} values, store dimension is {expected}")]
    RaggedVector {
        id: String,
        expected: usize,
        got: usize,
    },

    #[error("duplicate instance id {0}")]
    DuplicateId(String),

    #[error("parse error at byte {offset} of {path}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("malformed trial {index}: {message}")]
    BadTrial { index: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::DimMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
