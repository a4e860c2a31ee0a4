//! Error type shared by all modules of the library.

use thiserror::Error;

/// Failures surfaced by the library. Variants are grouped by how callers
/// should react: bad input shapes, violated preconditions, numeric
/// breakdowns, and I/O or parse problems from file-facing code.
#[derive(Debug, Error)]
pub enum FtsxError {
    /// Two objects that must share a shape (grid length, row count, ...) don't.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument is outside its documented domain (bad lag, nonpositive
    /// bandwidth, unsupported option, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A statistical precondition failed (series too short, all eigenvalues
    /// zero, not enough in-sample errors, ...).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A numeric computation broke down (non-finite values, degenerate
    /// denominator, rank deficiency).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed tabular input; `row` and `col` are 1-based file coordinates.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl FtsxError {
    /// Process exit code the CLI maps this error to: 2 for input problems,
    /// 3 for precondition violations, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            FtsxError::Parse { .. } | FtsxError::Io(_) | FtsxError::Serialize(_) => 2,
            FtsxError::DimensionMismatch(_)
            | FtsxError::InvalidArgument(_)
            | FtsxError::Precondition(_) => 3,
            FtsxError::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, FtsxError>;
