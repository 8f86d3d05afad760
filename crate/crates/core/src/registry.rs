//! Name-indexed registry of estimators behind a common trait, so front ends can select one
//! at run time.

use std::collections::BTreeMap;

use crate::composite::fit_via_composite;
use crate::error::{Error, Result};
use crate::estimators::{fit_dantzig, fit_em_rank, fit_two_step_threshold, RankConstraint, ThresholdParams};
use crate::gaussian::{PrecisionDecomposition, RegularizationParams, SampleCovariance};
use crate::solver::{fit_mle, FitReport, SolverOptions};

/// Everything an estimator may need besides the covariance. Fields an estimator does not use
/// are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub reg: RegularizationParams,
    pub opts: SolverOptions,
    /// Rank cap, required by `em`.
    pub rank: Option<RankConstraint>,
    /// Thresholds for `threshold`; defaults to [`ThresholdParams::default_for`].
    pub threshold: Option<ThresholdParams>,
    /// Starting point for `em`.
    pub init: Option<PrecisionDecomposition>,
}

impl EstimatorConfig {
    pub fn new(reg: RegularizationParams) -> Self {
        EstimatorConfig { reg, opts: SolverOptions::default(), rank: None, threshold: None, init: None }
    }
}

pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    /// Whether the estimator consumes `(λ, γ)`; sweeps over a grid are meaningless otherwise.
    fn uses_regularization(&self) -> bool {
        true
    }
    fn fit(&self, sigma: &SampleCovariance, cfg: &EstimatorConfig) -> Result<FitReport>;
}

struct Mle;

impl Estimator for Mle {
    fn name(&self) -> &'static str {
        "mle"
    }
    fn description(&self) -> &'static str {
        "penalized likelihood with l1 + trace penalties"
    }
    fn fit(&self, sigma: &SampleCovariance, cfg: &EstimatorConfig) -> Result<FitReport> {
        fit_mle(sigma, &cfg.reg, &cfg.opts)
    }
}

struct Em;

impl Estimator for Em {
    fn name(&self) -> &'static str {
        "em"
    }
    fn description(&self) -> &'static str {
        "rank-constrained alternating minimization; the l1 weight is lambda*gamma"
    }
    fn fit(&self, sigma: &SampleCovariance, cfg: &EstimatorConfig) -> Result<FitReport> {
        let rank = cfg
            .rank
            .ok_or_else(|| Error::InvalidParameter("the em estimator needs a rank cap".into()))?;
        fit_em_rank(sigma, cfg.reg.sparse_weight(), rank, cfg.init.as_ref(), &cfg.opts)
    }
}

struct Threshold;

impl Estimator for Threshold {
    fn name(&self) -> &'static str {
        "threshold"
    }
    fn description(&self) -> &'static str {
        "entrywise then spectral thresholding of the inverse covariance"
    }
    fn uses_regularization(&self) -> bool {
        false
    }
    fn fit(&self, sigma: &SampleCovariance, cfg: &EstimatorConfig) -> Result<FitReport> {
        let thr = cfg.threshold.unwrap_or_else(|| ThresholdParams::default_for(sigma));
        fit_two_step_threshold(sigma, &thr)
    }
}

struct Dantzig;

impl Estimator for Dantzig {
    fn name(&self) -> &'static str {
        "dantzig"
    }
    fn description(&self) -> &'static str {
        "l1 + trace objective under l-inf and spectral residual constraints"
    }
    fn fit(&self, sigma: &SampleCovariance, cfg: &EstimatorConfig) -> Result<FitReport> {
        fit_dantzig(sigma, &cfg.reg, &cfg.opts)
    }
}

struct Composite;

impl Estimator for Composite {
    fn name(&self) -> &'static str {
        "composite"
    }
    fn description(&self) -> &'static str {
        "likelihood fit of S - L followed by a composite-norm split"
    }
    fn fit(&self, sigma: &SampleCovariance, cfg: &EstimatorConfig) -> Result<FitReport> {
        fit_via_composite(sigma, &cfg.reg, &cfg.opts).map(|fit| fit.report)
    }
}

pub struct EstimatorRegistry {
    entries: BTreeMap<&'static str, Box<dyn Estimator>>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        EstimatorRegistry { entries: BTreeMap::new() }
    }

    /// Replaces any estimator registered under the same name.
    pub fn register(&mut self, estimator: Box<dyn Estimator>) {
        self.entries.insert(estimator.name(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Estimator> {
        self.entries
            .get(name)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnknownEstimator(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        let mut reg = EstimatorRegistry::empty();
        reg.register(Box::new(Mle));
        reg.register(Box::new(Em));
        reg.register(Box::new(Threshold));
        reg.register(Box::new(Dantzig));
        reg.register(Box::new(Composite));
        reg
    }
}
