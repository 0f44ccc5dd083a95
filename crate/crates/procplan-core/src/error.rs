//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage} produced a non-finite value")]
    NonFinite { stage: &'static str },

    #[error("malformed record at line {line}: field `{field}`: {msg}")]
    MalformedRecord {
        line: usize,
        field: String,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("planning horizon {got} exceeds configured maximum {max}")]
    HorizonExceeded { got: usize, max: usize },

    #[error("exact permutation solver limited to T <= {max}, got T = {got}; use the greedy fallback")]
    PermutationTooLarge { got: usize, max: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
