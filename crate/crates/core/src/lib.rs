//! Sparse-plus-low-rank decomposition of Gaussian precision matrices.
//!
//! The observed-variable precision of a Gaussian with a few latent variables is `K_O = S - L`,
//! with `S` sparse (the conditional graph among observed variables) and `L ⪰ 0` of rank equal
//! to the number of latents. [`solver::fit_mle`] recovers both pieces from a sample covariance
//! by penalized maximum likelihood; [`estimators`] and [`composite`] hold alternative estimators,
//! [`synth`] generates ground-truth models and [`diagnostics`] scores and certifies fits.

pub mod composite;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod gaussian;
pub mod linalg;
pub mod prox;
pub mod registry;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use gaussian::{PrecisionDecomposition, RegularizationParams, SampleCovariance};
pub use registry::{Estimator, EstimatorConfig, EstimatorRegistry};
pub use solver::{FitReport, SolverOptions};
