//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by hashing, learning, search, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had a different dimension than the consumer expects.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two binary codes of different bit counts were combined.
    #[error("code length mismatch: {left} vs {right} bits")]
    CodeLengthMismatch { left: usize, right: usize },

    /// An input contained NaN or infinite components.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A Hadamard matrix was requested for an order that is not a power of two.
    #[error("Hadamard order {0} is not a power of two")]
    NotPowerOfTwo(usize),

    /// The training sample cannot support the requested number of hash bits.
    #[error("covariance rank below {bits} bits: {detail}")]
    RankDeficient { bits: usize, detail: String },

    /// Fewer training rows than required.
    #[error("insufficient sample: need at least {needed} rows, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    /// A label was looked up that the codebook has no code for.
    #[error("unknown class id {0}")]
    UnknownClass(u32),

    /// An operation that requires at least one label received none.
    #[error("empty label set")]
    EmptyLabels,

    /// No unused target-code column is left (or distinctness could not be met).
    #[error("target codebook exhausted: {0}")]
    CodebookExhausted(String),

    /// A zero feature vector with positive hinge loss admits no update direction.
    #[error("degenerate input: zero vector with positive loss")]
    DegenerateInput,

    /// The multi-index no longer covers the database snapshot it was built over.
    #[error("stale index: built over {indexed} records, database now holds {current}; rebuild or merge")]
    StaleIndex { indexed: u64, current: u64 },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A persisted file did not match the expected layout.
    #[error("format error in {path} at byte {offset}: {detail}")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    /// A text input (labels, CSV features) failed to parse.
    #[error("parse error in {path} at line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Two artifacts are individually valid but incompatible with each other.
    #[error("incompatible models: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
