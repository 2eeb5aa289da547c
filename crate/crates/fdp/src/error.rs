//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum FdpError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Incompatible matrix/vector dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration or argument value is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Not enough observations to carry out the computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A matrix is (numerically) rank deficient where full rank is required.
    #[error("rank error: {0}")]
    Rank(String),

    /// An iterative numeric routine failed to converge or a backend call failed.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A variance used for standardization is zero or negative.
    #[error("degenerate variance at index {index}: {value}")]
    DegenerateVariance { index: usize, value: f64 },

    /// The matched-FDR threshold search could not bracket the target level.
    #[error("bisection failure: FDR({lo}) = {f_lo}, FDR({hi}) = {f_hi} does not bracket target {target}")]
    Bisection {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
        target: f64,
    },

    /// A cell of an input file failed to parse.
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FdpError>;
