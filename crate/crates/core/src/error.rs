use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("zero-variance feature column {column}")]
    ZeroVariance { column: usize },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("kernel arity mismatch: {0}")]
    Arity(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient samples in class {class}: need at least {needed}, have {available}")]
    InsufficientSamples { class: usize, needed: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sampling ratio exceeds 1: s*n1 = {requested} > n0 = {available}; run the full-sample test instead")]
    RatioExceedsOne { requested: usize, available: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("enumeration of {count} combinations exceeds the limit of {limit}")]
    TooManyCombinations { count: f64, limit: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    /// True for errors caused by the data themselves rather than by the request.
    pub fn is_degenerate_data(&self) -> bool {
        matches!(
            self,
            Error::DegeneratePartition(_)
                | Error::ZeroVariance { .. }
                | Error::Degenerate(_)
                | Error::InsufficientSamples { .. }
        )
    }
}
