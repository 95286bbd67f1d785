use thiserror::Error;

/// Errors raised while building models or evaluating bounds.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrbError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("shape mismatch: {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("duplicate pilot index {0}")]
    DuplicateIndex(usize),
    #[error("pilot index {index} out of range (symbol count {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("precoder has rank {rank}, expected full column rank {expected}")]
    RankDeficientPrecoder { rank: usize, expected: usize },
    #[error("pilot matrix has rank {rank}, expected full row rank {expected}")]
    RankDeficientPilots { rank: usize, expected: usize },
    #[error("stacked constraint matrix has rank {rank} but {rows} rows; pilot constraints overlap the precoder constraint")]
    DegenerateConstraints { rank: usize, rows: usize },
    #[error("matrix is not invertible (condition number {condition:e})")]
    NonInvertible { condition: f64 },
    #[error("parameters not identifiable: {gram} is singular (condition number {condition:e})")]
    NonIdentifiable { gram: String, condition: f64 },
    #[error("pilot constraint has no solution (residual {residual:e})")]
    InfeasiblePilots { residual: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CrbError>;

pub(crate) fn shape_mismatch(
    what: &'static str,
    expected: impl ToString,
    got: impl ToString,
) -> CrbError {
    CrbError::ShapeMismatch {
        what,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
