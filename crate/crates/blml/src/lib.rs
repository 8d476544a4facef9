//! Band-limited maximum-likelihood density estimation.
//!
//! The estimator represents a square-root amplitude as a finite sinc-kernel
//! expansion anchored at the sample points, solves a per-orthant stationarity
//! system for the expansion coefficients, and squares the amplitude to get a
//! nonnegative density whose spectrum is confined below a cut-off frequency.
//! The crate also carries the reference kernel estimators, analytic test
//! densities, error-curve machinery, cut-off selection, and the conditional
//! intensity tooling built on top of the density fits.

pub mod bandwidth;
pub mod binning;
pub mod error;
pub mod fit;
pub mod gram;
pub mod kde;
pub mod linalg;
pub mod mise;
pub mod op;
pub mod pointprocess;
pub mod sample;
pub mod seeding;
pub mod sinc;
pub mod solver;
pub mod surrogate;

pub use error::{Error, Result};
pub use fit::{BlmlFit, FitAlgorithm};
pub use sample::SampleSet;
pub use sinc::CutoffFrequency;
pub use solver::{CoefficientVector, NewtonConfig, OrthantVector};
