use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),

    #[error("store is empty")]
    EmptyStore,

    #[error("k = {k} is invalid for a collection of {available} items")]
    InvalidK { k: usize, available: usize },

    #[error("duplicate item id {0}")]
    DuplicateId(u64),

    #[error("unknown item id {0}")]
    UnknownId(u64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic: expected \"VSET1\"")]
    BadMagic,

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("payload count mismatch: {0}")]
    CountMismatch(String),

    #[error("malformed header: {0}")]
    BadHeader(String),

    #[error("malformed metadata line {line}: {message}")]
    BadMetadata { line: usize, message: String },

    #[error("store ids must be 0..count-1 to be written as a vector file")]
    NonContiguousIds,

    #[error("item {0} has no parameterized embedding")]
    NotParameterized(u64),

    #[error("separator has a zero weight vector")]
    ZeroSeparator,

    #[error("template of length {template} is longer than series of length {series}")]
    TemplateTooLong { template: usize, series: usize },

    #[error("timestamps must be non-decreasing (index {0})")]
    UnorderedEvents(usize),

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("filter expression: {0}")]
    Filter(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
