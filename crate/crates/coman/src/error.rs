//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensors, graphs, models, the allocator, and data IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected {expected} values for shape {shape:?}, got {got}")]
    SizeMismatch {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{what}: width mismatch, expected {expected}, got {got}")]
    WidthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("malformed gates: {0}")]
    MalformedGates(String),

    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),

    #[error(
        "infeasible budget: cheapest treatment {min_treatment} exceeds budget {budget} \
         while responses are positive"
    )]
    InfeasibleBudget { min_treatment: f64, budget: f64 },

    #[error("instance too large for exhaustive search: |T|^|C| = {combinations} > {limit}")]
    InstanceTooLarge { combinations: f64, limit: f64 },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("schema mismatch in {path}: {detail}")]
    Schema { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
