//! Estimation of the realized false discovery proportion (FDP) for
//! large-scale multiple testing under arbitrary, unknown dependence.
//!
//! The pipeline combines a sparse-residual factor covariance estimator
//! (principal components plus adaptive thresholding) with a principal
//! factor approximation of the test statistics, yielding an FDP estimate
//! for p-value thresholding rules, an adjusted procedure that subtracts
//! estimated common factors from each statistic, and a simulation harness
//! for benchmarking both.

pub mod cli;
pub mod eigen;
pub mod error;
pub mod normal;
pub mod pfa;
pub mod poet;
pub mod sim;
pub mod types;

pub use error::{FdpError, Result};
