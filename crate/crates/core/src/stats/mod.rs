//! Statistical checks of the length process: convergence to the length map,
//! dependence between second-layer units, and Cauchy vs. Gaussian fits.

pub mod convergence;
pub mod distribution;
pub mod histogram;
pub mod moments;

pub use convergence::{convergence_report, wilson_interval, ConvergenceReport, ConvergenceSetup, WidthResult};
pub use distribution::{
    cauchy_cdf, fit_and_test_distribution, fit_cauchy, ks_statistic, DistributionFit, Reference,
};
pub use histogram::{histogram, Histogram};
pub use moments::{cross_moment_gap, theoretical_gap, CrossMomentResult};

use thiserror::Error;

use crate::lengthmap::LengthMapError;
use crate::simulator::SimError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("all samples are identical")]
    DegenerateSample,
    #[error("no closed form for activation `{0}`")]
    UnsupportedActivation(String),
    #[error("length map diverges at layer {layer}")]
    MapDiverged { layer: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    LengthMap(#[from] LengthMapError),
}
