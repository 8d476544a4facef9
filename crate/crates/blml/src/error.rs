//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data failed validation (non-finite values, empty sets, bad shapes).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Mismatched dimensions between related arguments.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A size guard was exceeded; the operation refuses rather than thrash.
    #[error("{what}: size {got} exceeds the supported maximum {max}")]
    TooLarge {
        what: &'static str,
        got: usize,
        max: usize,
    },

    /// Not enough data to proceed.
    #[error("{what}: need at least {min}, got {got}")]
    TooSmall {
        what: &'static str,
        got: usize,
        min: usize,
    },

    /// Newton iteration exhausted its budget; carries the best iterate seen.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    Convergence {
        residual: f64,
        iterations: usize,
        best: Vec<f64>,
    },

    /// A configuration value is unusable (bad grid, bad envelope, bad domain).
    #[error("configuration error: {0}")]
    Config(String),

    /// Knee detection found no qualifying drop in the derivative curve.
    #[error("no knee detected: {0}")]
    NoKnee(String),

    /// Density mass over the declared domain is too small to renormalize.
    #[error("density mass {mass:.3e} over the declared domain is too small to normalize")]
    Unnormalizable { mass: f64 },
}
