//! Recovery metrics, signal levels, identifiability surrogates, optimality certificates and
//! γ-stability summaries.
//!
//! Support metrics look only at the strict upper triangle: a symmetric pair `(i, j)`/`(j, i)`
//! counts once and diagonals (always nonzero for PD matrices) are ignored.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{PrecisionDecomposition, RegularizationParams, SampleCovariance, PSD_TOL};
use crate::linalg::{self, Matrix, SymEigen};
use crate::solver::FitReport;
use crate::synth::SyntheticModel;

/// Default relative eigenvalue cutoff for counting the rank of an estimated `L`.
pub const DEFAULT_RANK_TOL: f64 = 1e-6;
/// Eigenvalues of a ground-truth `L*` at or below this are treated as zero.
pub const TRUTH_EIGEN_FLOOR: f64 = 1e-10;

/// Default support cutoff: `1e-6·max|S*|`.
pub fn default_zero_tol(truth: &PrecisionDecomposition) -> f64 {
    1e-6 * truth.s.amax()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub sign_consistent: bool,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Pairs in both supports whose signs disagree.
    pub sign_flips: usize,
    pub rank_correct: bool,
    pub rank_est: usize,
    pub rank_true: usize,
    /// `‖Ŝ - S*‖_ℓ∞` (largest absolute entry)
    pub loss_linf: f64,
    /// `‖L̂ - L*‖₂`
    pub loss_spectral: f64,
    /// `‖Ŝ - S*‖_F + ‖L̂ - L*‖_F`
    pub loss_frob_total: f64,
}

fn sign_of(v: f64, zero_tol: f64) -> i8 {
    if v.abs() <= zero_tol {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

/// Sign pattern of the strict upper triangle.
pub fn sign_pattern(s: &Matrix, zero_tol: f64) -> Vec<i8> {
    let p = s.nrows();
    (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .map(|(i, j)| sign_of(s[(i, j)], zero_tol))
        .collect()
}

/// Number of eigenvalues above `rank_tol·max(λmax, 1e-12)`.
pub fn numerical_rank(l: &Matrix, rank_tol: f64) -> usize {
    let eig = SymEigen::new(l);
    let cutoff = rank_tol * eig.max().max(1e-12);
    eig.values.iter().filter(|&&v| v > cutoff).count()
}

fn truth_rank(l: &Matrix) -> usize {
    SymEigen::new(l).values.iter().filter(|&&v| v > TRUTH_EIGEN_FLOOR).count()
}

pub fn recovery_metrics(
    est: &PrecisionDecomposition,
    truth: &PrecisionDecomposition,
    zero_tol: f64,
    rank_tol: f64,
) -> Result<RecoveryMetrics> {
    let p = truth.p();
    for m in [&est.s, &est.l, &truth.l] {
        linalg::ensure_dim(m, p)?;
    }
    let est_signs = sign_pattern(&est.s, zero_tol);
    let true_signs = sign_pattern(&truth.s, 0.0);
    let (mut fp, mut fneg, mut flips) = (0, 0, 0);
    for (&e, &t) in est_signs.iter().zip(&true_signs) {
        match (e, t) {
            (0, 0) => {}
            (_, 0) => fp += 1,
            (0, _) => fneg += 1,
            (a, b) if a != b => flips += 1,
            _ => {}
        }
    }
    let rank_est = numerical_rank(&est.l, rank_tol);
    let rank_true = truth_rank(&truth.l);
    let ds = &est.s - &truth.s;
    let dl = &est.l - &truth.l;
    Ok(RecoveryMetrics {
        sign_consistent: fp == 0 && fneg == 0 && flips == 0,
        false_positives: fp,
        false_negatives: fneg,
        sign_flips: flips,
        rank_correct: rank_est == rank_true,
        rank_est,
        rank_true,
        loss_linf: linalg::linf_norm(&ds),
        loss_spectral: linalg::spectral_norm(&dl),
        loss_frob_total: ds.norm() + dl.norm(),
    })
}

impl SyntheticModel {
    pub fn truth(&self) -> PrecisionDecomposition {
        PrecisionDecomposition::new(self.s_star.clone(), self.l_star.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalLevels {
    /// Smallest nonzero off-diagonal magnitude of `S*`; `+∞` when the support is diagonal-only.
    pub theta: f64,
    /// Smallest nonzero eigenvalue of `L*`; `0` when there is no low-rank part.
    pub sigma_min: f64,
    pub notes: Vec<String>,
}

pub fn signal_levels(truth: &PrecisionDecomposition) -> SignalLevels {
    let p = truth.p();
    let mut notes = Vec::new();
    let theta = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .map(|(i, j)| truth.s[(i, j)].abs())
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if theta.is_infinite() {
        notes.push("S* has no off-diagonal support; theta reported as +inf".to_string());
    }
    let sigma_min = SymEigen::new(&truth.l)
        .values
        .iter()
        .copied()
        .filter(|&v| v > TRUTH_EIGEN_FLOOR)
        .fold(f64::INFINITY, f64::min);
    let sigma_min = if sigma_min.is_finite() {
        sigma_min
    } else {
        notes.push("no low-rank part; sigma_min reported as 0".to_string());
        0.0
    };
    SignalLevels { theta, sigma_min, notes }
}

/// Computable stand-ins for the transversality constants: subspace coherence of `L*` and the
/// maximum off-diagonal degree of `S*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// `max_i ‖P_U eᵢ‖₂` for `U` the column space of `L*`.
    pub coherence: f64,
    pub subspace_dim: usize,
    pub max_degree: usize,
    pub notes: Vec<String>,
}

pub fn identifiability_report(truth: &PrecisionDecomposition) -> IdentifiabilityReport {
    let p = truth.p();
    let eig = SymEigen::new(&truth.l);
    let basis: Vec<usize> = (0..eig.values.len()).filter(|&k| eig.values[k] > TRUTH_EIGEN_FLOOR).collect();
    let mut notes = Vec::new();
    let coherence = if basis.is_empty() {
        notes.push("L* = 0: empty column space, coherence reported as 0".to_string());
        0.0
    } else {
        (0..p)
            .map(|i| basis.iter().map(|&k| eig.vectors[(i, k)].powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    let max_degree = (0..p)
        .map(|i| (0..p).filter(|&j| j != i && truth.s[(i, j)] != 0.0).count())
        .max()
        .unwrap_or(0);
    notes.push("coherence and degree are surrogates; the Fisher-information constants are not computed".into());
    IdentifiabilityReport { coherence, subspace_dim: basis.len(), max_degree, notes }
}

/// Stationarity residuals of the penalized likelihood at `(S, L)`, with `G = Σ - (S - L)⁻¹`.
///
/// At an optimum `G = -λγ·sign(S)` on the support of `S`, `‖G‖_ℓ∞ ≤ λγ`, `G ⪯ λI` and
/// `(λI - G)` annihilates the range of `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `max(0, ‖G‖_ℓ∞/(λγ) - 1)`
    pub dual_linf: f64,
    /// `max_{(i,j) ∈ supp S} |G_ij + λγ·sign(S_ij)|`
    pub support_slack: f64,
    /// `max(0, λmax(G)/λ - 1)`
    pub dual_spec: f64,
    /// `‖(λI - G)U‖₂` for `U` an orthonormal basis of range(L)
    pub lowrank_slack: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.dual_linf.max(self.support_slack).max(self.dual_spec).max(self.lowrank_slack)
    }
}

fn relative_excess(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        (value / bound - 1.0).max(0.0)
    } else {
        value.max(0.0)
    }
}

pub fn kkt_report(
    sigma: &SampleCovariance,
    decomp: &PrecisionDecomposition,
    reg: &RegularizationParams,
) -> Result<KktResiduals> {
    let p = sigma.p();
    linalg::ensure_dim(&decomp.s, p)?;
    linalg::ensure_dim(&decomp.l, p)?;
    decomp.feasibility(PSD_TOL).map_err(|why| Error::Infeasible(why.to_string()))?;
    let g = sigma.matrix() - linalg::pd_inverse(&decomp.precision())?;
    let sw = reg.sparse_weight();

    let dual_linf = relative_excess(linalg::linf_norm(&g), sw);
    let support_tol = 1e-12 * decomp.s.amax().max(1.0);
    let mut support_slack = 0.0_f64;
    for i in 0..p {
        for j in 0..p {
            let s = decomp.s[(i, j)];
            if s.abs() > support_tol {
                support_slack = support_slack.max((g[(i, j)] + sw * s.signum()).abs());
            }
        }
    }
    let dual_spec = relative_excess(SymEigen::new(&g).max(), reg.lambda);

    let eig = SymEigen::new(&decomp.l);
    let cutoff = 1e-9 * eig.max().max(1.0);
    let range: Vec<usize> = (0..p).filter(|&k| eig.values[k] > cutoff).collect();
    let lowrank_slack = if range.is_empty() {
        0.0
    } else {
        let u = DMatrix::from_fn(p, range.len(), |i, c| eig.vectors[(i, range[c])]);
        let shifted = Matrix::identity(p, p) * reg.lambda - &g;
        linalg::spectral_norm(&(shifted * u))
    };
    Ok(KktResiduals { dual_linf, support_slack, dual_spec, lowrank_slack })
}

/// Maximal run of consecutive γ values sharing one (sign pattern, rank) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityInterval {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub ratio: f64,
    pub first_index: usize,
    pub last_index: usize,
    pub support_size: usize,
    pub rank: usize,
    /// Present when a ground truth was supplied.
    pub exact_recovery: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub intervals: Vec<StabilityInterval>,
}

impl StabilitySummary {
    /// Widest (by `γ_hi/γ_lo`) interval achieving exact recovery.
    pub fn best_recovery(&self) -> Option<&StabilityInterval> {
        self.intervals
            .iter()
            .filter(|iv| iv.exact_recovery == Some(true))
            .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
    }
}

pub fn gamma_stability(
    results: &[(f64, FitReport)],
    truth: Option<&PrecisionDecomposition>,
    zero_tol: f64,
    rank_tol: f64,
) -> Result<StabilitySummary> {
    for (k, w) in results.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(Error::UnsortedGrid(k + 1));
        }
    }
    let true_key = truth.map(|t| (sign_pattern(&t.s, 0.0), truth_rank(&t.l)));
    let mut intervals: Vec<StabilityInterval> = Vec::new();
    let mut current: Option<(Vec<i8>, usize)> = None;
    for (idx, (gamma, fit)) in results.iter().enumerate() {
        let key = (sign_pattern(&fit.decomp.s, zero_tol), numerical_rank(&fit.decomp.l, rank_tol));
        if current.as_ref() == Some(&key) {
            let last = intervals.last_mut().expect("interval open");
            last.gamma_hi = *gamma;
            last.last_index = idx;
            last.ratio = last.gamma_hi / last.gamma_lo;
            continue;
        }
        intervals.push(StabilityInterval {
            gamma_lo: *gamma,
            gamma_hi: *gamma,
            ratio: 1.0,
            first_index: idx,
            last_index: idx,
            support_size: key.0.iter().filter(|&&s| s != 0).count(),
            rank: key.1,
            exact_recovery: true_key.as_ref().map(|t| *t == key),
        });
        current = Some(key);
    }
    Ok(StabilitySummary { intervals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{fit_mle, SolverOptions};
    use std::collections::BTreeMap;

    fn worked_truth() -> PrecisionDecomposition {
        PrecisionDecomposition::new(Matrix::identity(2, 2) * 2.0, Matrix::from_element(2, 2, 0.5))
    }

    fn truth4() -> PrecisionDecomposition {
        let s = Matrix::from_row_slice(4, 4, &[
            2.0, 0.3, 0.0, -2.0,
            0.3, 2.0, 0.0, 0.0,
            0.0, 0.0, 2.0, 0.0,
            -2.0, 0.0, 0.0, 5.0,
        ]);
        let u = nalgebra::dvector![1.0, 1.0, 0.0, 0.0];
        let v = nalgebra::dvector![0.0, 0.0, 1.0, 1.0];
        let l = &u * u.transpose() * 0.2 + &v * v.transpose() * 0.1;
        PrecisionDecomposition::new(s, l)
    }

    #[test]
    fn exact_estimate_is_consistent() {
        let t = truth4();
        let m = recovery_metrics(&t, &t, default_zero_tol(&t), DEFAULT_RANK_TOL).unwrap();
        assert!(m.sign_consistent && m.rank_correct);
        assert_eq!((m.false_positives, m.false_negatives), (0, 0));
        assert_eq!(m.rank_est, 2);
        assert_eq!((m.loss_linf, m.loss_spectral, m.loss_frob_total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn dropped_edge_is_one_false_negative() {
        let t = truth4();
        let mut est = t.clone();
        est.s[(0, 1)] = 0.0;
        est.s[(1, 0)] = 0.0;
        let m = recovery_metrics(&est, &t, default_zero_tol(&t), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(m.false_negatives, 1);
        assert_eq!(m.false_positives, 0);
        assert!(!m.sign_consistent);
    }

    #[test]
    fn rank_tolerance_absorbs_tiny_perturbation() {
        let t = truth4();
        let mut est = t.clone();
        est.l += Matrix::identity(4, 4) * 1e-12;
        let m = recovery_metrics(&est, &t, default_zero_tol(&t), 1e-6).unwrap();
        assert_eq!(m.rank_est, 2);
        assert!(m.rank_correct);
    }

    #[test]
    fn metrics_reject_dimension_mismatch() {
        let t = truth4();
        let est = worked_truth();
        assert!(matches!(
            recovery_metrics(&est, &t, 1e-6, 1e-6),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn signal_levels_examples() {
        let lv = signal_levels(&worked_truth());
        assert_eq!(lv.theta, f64::INFINITY);
        assert!((lv.sigma_min - 1.0).abs() < 1e-12);
        let lv = signal_levels(&PrecisionDecomposition::sparse_only(Matrix::identity(3, 3)));
        assert_eq!(lv.sigma_min, 0.0);
        assert_eq!(lv.notes.len(), 2);
        let lv = signal_levels(&truth4());
        assert_eq!(lv.theta, 0.3);
    }

    #[test]
    fn coherence_extremes() {
        let p = 5;
        let mut l = Matrix::zeros(p, p);
        l[(0, 0)] = 1.0;
        let r = identifiability_report(&PrecisionDecomposition::new(Matrix::identity(p, p), l));
        assert!((r.coherence - 1.0).abs() < 1e-12);
        let l = Matrix::from_element(p, p, 1.0 / p as f64);
        let r = identifiability_report(&PrecisionDecomposition::new(Matrix::identity(p, p), l));
        assert!((r.coherence - 1.0 / (p as f64).sqrt()).abs() < 1e-12);
        let r = identifiability_report(&PrecisionDecomposition::sparse_only(Matrix::identity(p, p)));
        assert_eq!(r.coherence, 0.0);
        assert_eq!(r.max_degree, 0);
        assert_eq!(identifiability_report(&truth4()).max_degree, 2);
    }

    #[test]
    fn kkt_scalar_optimum() {
        let sigma = SampleCovariance::new(Matrix::from_element(1, 1, 1.0), 10).unwrap();
        let d = PrecisionDecomposition::new(Matrix::from_element(1, 1, 0.5), Matrix::zeros(1, 1));
        let reg = RegularizationParams::new(0.5, 2.0).unwrap();
        let k = kkt_report(&sigma, &d, &reg).unwrap();
        assert_eq!(k.dual_linf, 0.0);
        assert_eq!(k.support_slack, 0.0);
        assert_eq!(k.dual_spec, 0.0);
        assert_eq!(k.lowrank_slack, 0.0);
    }

    #[test]
    fn kkt_diagonal_optimum() {
        let sigma = SampleCovariance::new(Matrix::identity(3, 3), 10).unwrap();
        for gamma in [1.0, 2.0, 4.0] {
            let reg = RegularizationParams::new(1.0 / gamma, gamma).unwrap();
            let d = PrecisionDecomposition::sparse_only(Matrix::identity(3, 3) * 0.5);
            assert!(kkt_report(&sigma, &d, &reg).unwrap().max() <= 1e-8);
        }
    }

    #[test]
    fn kkt_detects_a_perturbed_point() {
        let sigma = SampleCovariance::new(Matrix::identity(3, 3), 10).unwrap();
        let reg = RegularizationParams::new(0.5, 2.0).unwrap();
        let d = PrecisionDecomposition::sparse_only(Matrix::identity(3, 3) * 0.6);
        assert!(kkt_report(&sigma, &d, &reg).unwrap().max() > 0.01);
        let bad = PrecisionDecomposition::new(Matrix::identity(3, 3), Matrix::identity(3, 3) * 2.0);
        assert!(matches!(kkt_report(&sigma, &bad, &reg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn kkt_certifies_a_solver_run_with_low_rank() {
        let k = Matrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 2.0]);
        let m = crate::gaussian::marginal_precision(&k, &[0, 1], &[2]).unwrap();
        let sigma = SampleCovariance::new(linalg::pd_inverse(&m.k_o).unwrap(), 1000).unwrap();
        let reg = RegularizationParams::new(0.05, 0.5).unwrap();
        let fit = fit_mle(&sigma, &reg, &SolverOptions::default().with_max_iter(20000)).unwrap();
        assert!(fit.converged);
        assert!(kkt_report(&sigma, &fit.decomp, &reg).unwrap().max() < 1e-4);
    }

    fn report_with(s: Matrix, l: Matrix) -> FitReport {
        FitReport {
            estimator: "test".into(),
            decomp: PrecisionDecomposition::new(s, l),
            objective: 0.0,
            iterations: 1,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
            history: vec![],
            init: None,
            notes: vec![],
            extras: BTreeMap::new(),
        }
    }

    #[test]
    fn stability_single_interval() {
        let t = truth4();
        let results: Vec<_> = [0.1, 0.2, 0.4].iter().map(|&g| (g, report_with(t.s.clone(), t.l.clone()))).collect();
        let sum = gamma_stability(&results, Some(&t), 1e-9, 1e-6).unwrap();
        assert_eq!(sum.intervals.len(), 1);
        let iv = &sum.intervals[0];
        assert_eq!((iv.gamma_lo, iv.gamma_hi), (0.1, 0.4));
        assert!((iv.ratio - 4.0).abs() < 1e-12);
        assert_eq!(iv.exact_recovery, Some(true));
        assert_eq!(sum.best_recovery().unwrap().ratio, iv.ratio);
    }

    #[test]
    fn stability_splits_on_change() {
        let t = truth4();
        let mut changed = t.s.clone();
        changed[(0, 1)] = 0.0;
        changed[(1, 0)] = 0.0;
        let results = vec![
            (0.1, report_with(t.s.clone(), t.l.clone())),
            (0.2, report_with(t.s.clone(), t.l.clone())),
            (0.4, report_with(changed.clone(), t.l.clone())),
            (0.8, report_with(changed, t.l.clone())),
        ];
        let sum = gamma_stability(&results, None, 1e-9, 1e-6).unwrap();
        assert_eq!(sum.intervals.len(), 2);
        assert_eq!(sum.intervals[0].gamma_hi, 0.2);
        assert_eq!(sum.intervals[1].gamma_lo, 0.4);
        assert_eq!(sum.intervals[1].exact_recovery, None);
    }

    #[test]
    fn stability_rejects_unsorted_grid() {
        let t = truth4();
        let results = vec![
            (0.2, report_with(t.s.clone(), t.l.clone())),
            (0.1, report_with(t.s.clone(), t.l.clone())),
        ];
        assert_eq!(gamma_stability(&results, None, 1e-9, 1e-6).unwrap_err(), Error::UnsortedGrid(1));
    }
}
