//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by estimation, bound assembly and inference routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input arrays disagree on sample count, dimension or target layout.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input contained NaN or infinity where a finite value is required.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// A parameter is outside its legal range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The requested operation has no data to work on.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// An iterative solver did not reach its tolerance within the iteration cap.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.3e})")]
    SolverDiverged {
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },

    /// A weight row has no mass, so the local fit at that point is undefined.
    #[error("weight row {row} sums to zero; local fit is undefined")]
    ZeroWeightRow { row: usize },

    /// Too many bootstrap replicates failed to produce bounds.
    #[error("bootstrap aborted: {failed} of {total} replicates failed (more than 20%)")]
    BootstrapFailure { failed: usize, total: usize },

    /// Forest (de)serialization problems.
    #[error("forest serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
