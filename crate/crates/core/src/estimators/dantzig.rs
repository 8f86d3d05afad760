//! Constrained (Dantzig-style) decomposition:
//!
//! ```text
//! minimize  γ‖S‖₁ + tr L
//! s.t.      ‖Σ(S - L) - I‖_∞ ≤ γλ,   ‖Σ(S - L) - I‖₂ ≤ λ,   L ⪰ 0
//! ```
//!
//! Solved by consensus ADMM over four blocks `(S, L, A, B)` where `A` and `B` are copies of the
//! (nonsymmetric) residual `Σ(S - L) - I` living in the entrywise and spectral balls. The
//! consensus copy lives on the affine set `A = B = Σ(S - L) - I`, whose projection reduces to
//! a Sylvester-type equation diagonal in the eigenbasis of `Σ`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gaussian::{PrecisionDecomposition, RegularizationParams, SampleCovariance};
use crate::linalg::{self, Matrix, SymEigen};
use crate::prox;
use crate::solver::{covariance_scale, FitReport, IterRecord, PenaltySchedule, SolverOptions, RELAXATION};

/// Largest constraint violation accepted at a reported solution.
pub const CONSTRAINT_TOL: f64 = 1e-6;
/// Violation above which a stalled run is declared infeasible rather than slow.
const INFEASIBLE_VIOLATION: f64 = 1e-4;
const MAX_TIGHTENING: f64 = 1e-6;
/// Iterations between duality-gap checks.
const GAP_PERIOD: usize = 10;

/// Projection onto `{(S, L, A, B) : A = B = Σ(S - L) - I}` in the eigenbasis of `Σ`.
struct AffineProjector {
    sigma: Matrix,
    q: Matrix,
    /// `1 + 2λᵢ² + 2λⱼ²`.
    denom: Matrix,
}

impl AffineProjector {
    fn new(sigma: &Matrix) -> Self {
        let eig = SymEigen::new(sigma);
        let p = sigma.nrows();
        let d = &eig.values;
        let denom = Matrix::from_fn(p, p, |i, j| 1.0 + 2.0 * d[i] * d[i] + 2.0 * d[j] * d[j]);
        AffineProjector { sigma: sigma.clone(), q: eig.vectors, denom }
    }

    fn project(&self, s: &Matrix, l: &Matrix, a: &Matrix, b: &Matrix) -> (Matrix, Matrix, Matrix) {
        let p = s.nrows();
        let sum = s + l;
        let d0 = s - l;
        let c = Matrix::identity(p, p) + (a + b) * 0.5;
        let rhs = &d0 + (&self.sigma * &c + c.transpose() * &self.sigma) * 2.0;
        let rotated = self.q.transpose() * rhs * &self.q;
        let solved = rotated.component_div(&self.denom);
        let d = linalg::symmetrize(&(&self.q * solved * self.q.transpose()));
        let y = &self.sigma * &d - Matrix::identity(p, p);
        ((&sum + &d) * 0.5, (&sum - &d) * 0.5, y)
    }
}

struct Activity {
    linf: f64,
    spectral: f64,
    linf_violation: f64,
    spectral_violation: f64,
}

fn activity(sigma: &Matrix, s: &Matrix, l: &Matrix, reg: &RegularizationParams) -> Activity {
    let p = s.nrows();
    let resid = sigma * (s - l) - Matrix::identity(p, p);
    let linf = linalg::linf_norm(&resid);
    let spectral = linalg::spectral_norm(&resid);
    Activity {
        linf: linf / reg.sparse_weight(),
        spectral: spectral / reg.lambda,
        linf_violation: (linf - reg.sparse_weight()).max(0.0),
        spectral_violation: (spectral - reg.lambda).max(0.0),
    }
}

/// Fits the constrained program. The reported `(S, L)` come from the prox block, so `S` has
/// exact zeros and `L` is exactly PSD; the constraint activities `‖R‖_∞/(γλ)` and `‖R‖₂/λ` of the
/// residual `R = Σ(S - L) - I` are recorded in `extras`, along with a duality gap when the point
/// is feasible.
///
/// A run stops once the ADMM residuals are small or a feasible point is certified by the gap.
/// Some instances with a tight box converge only sublinearly; those come back unconverged rather
/// than as errors. `ConstraintsInfeasible` is reserved for provably empty sets and for runs whose
/// residual stalls when emptiness cannot be decided up front.
pub fn fit_dantzig(sigma: &SampleCovariance, reg: &RegularizationParams, opts: &SolverOptions) -> Result<FitReport> {
    opts.validate()?;
    if !(reg.lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("the constrained estimator needs lambda > 0, got {}", reg.lambda)));
    }
    let p = sigma.p();
    // Σ(S - L) is invariant under (Σ, S, L) -> (Σ/c, cS, cL); the objective scales by c.
    let c = covariance_scale(sigma);
    let work = sigma.matrix() / c;
    let feasibility = classify(&work, reg);
    if feasibility == Feasibility::Impossible {
        // Lower bounds: ‖R‖₂ ≥ 1 and hence max |Rᵢⱼ| ≥ 1/p.
        return Err(Error::ConstraintsInfeasible {
            linf_violation: (1.0 / p as f64 - reg.sparse_weight()).max(0.0),
            spectral_violation: 1.0 - reg.lambda,
        });
    }
    let projector = AffineProjector::new(&work);
    let (gamma, box_radius, ball_radius) = (reg.gamma, reg.sparse_weight(), reg.lambda);

    let zero = Matrix::zeros(p, p);
    let (mut s, mut l) = (zero.clone(), zero.clone());
    let (mut zs, mut zl, mut za, mut zb) = (zero.clone(), zero.clone(), zero.clone(), zero.clone());
    let (mut us, mut ul, mut ua, mut ub) = (zero.clone(), zero.clone(), zero.clone(), zero.clone());

    let mut penalty = PenaltySchedule::new(opts.penalty);
    let (mut tol_primal, mut tol_dual) = (opts.tol_primal, opts.tol_dual);
    let mut history: Vec<IterRecord> = Vec::new();
    let mut merit = f64::INFINITY;
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iterations = 0;
    let gap_tol = opts.tol_primal.max(opts.tol_dual);

    for k in 1..=opts.max_iter {
        iterations = k;
        let rho = penalty.rho;
        s = prox::soft_threshold_entrywise(&(&zs - &us), gamma / rho);
        l = prox::psd_trace_prox(&(&zl - &ul), 1.0 / rho);
        let a = prox::clip_entrywise(&(&za - &ua), box_radius);
        let b = prox::clip_singular_values(&(&zb - &ub), ball_radius);

        let hs = &s * RELAXATION + &zs * (1.0 - RELAXATION);
        let hl = &l * RELAXATION + &zl * (1.0 - RELAXATION);
        let ha = &a * RELAXATION + &za * (1.0 - RELAXATION);
        let hb = &b * RELAXATION + &zb * (1.0 - RELAXATION);
        let (ns, nl, ny) = projector.project(&(&hs + &us), &(&hl + &ul), &(&ha + &ua), &(&hb + &ub));

        let dz2 = (&ns - &zs).norm_squared() + (&nl - &zl).norm_squared() + 2.0 * (&ny - &za).norm_squared();
        let pr2 = (&s - &ns).norm_squared()
            + (&l - &nl).norm_squared()
            + (&a - &ny).norm_squared()
            + (&b - &ny).norm_squared();
        us += &hs - &ns;
        ul += &hl - &nl;
        ua += &ha - &ny;
        ub += &hb - &ny;
        zs = ns;
        zl = nl;
        za = ny.clone();
        zb = ny;

        let scale = (s.norm_squared() + l.norm_squared()).sqrt().max(1.0);
        primal = pr2.sqrt() / scale;
        dual = rho * dz2.sqrt() / scale;
        let obj = (gamma * linalg::l1_norm(&s) + l.trace()) / c;
        merit = merit.min(obj);
        history.push(IterRecord { objective: obj, merit, primal_residual: primal, dual_residual: dual });

        if k % GAP_PERIOD == 0 {
            let act = activity(&work, &s, &l, reg);
            if act.linf_violation <= CONSTRAINT_TOL && act.spectral_violation <= CONSTRAINT_TOL {
                let value = gamma * linalg::l1_norm(&s) + l.trace();
                let gap = value - dual_bound(&work, &ua, &ub, rho, reg);
                if gap <= gap_tol * value.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
        }
        if primal <= tol_primal && dual <= tol_dual {
            let act = activity(&work, &s, &l, reg);
            if act.linf_violation <= CONSTRAINT_TOL && act.spectral_violation <= CONSTRAINT_TOL {
                converged = true;
                break;
            }
            if tol_primal <= opts.tol_primal * MAX_TIGHTENING {
                break;
            }
            tol_primal /= 10.0;
            tol_dual /= 10.0;
        }
        if let Some(ratio) = penalty.update(k, primal, dual) {
            us *= ratio;
            ul *= ratio;
            ua *= ratio;
            ub *= ratio;
        }
    }

    let act = activity(&work, &s, &l, reg);
    let violation = act.linf_violation.max(act.spectral_violation);
    if !converged && feasibility == Feasibility::Unknown && violation > INFEASIBLE_VIOLATION && stalled(&history) {
        return Err(Error::ConstraintsInfeasible {
            linf_violation: act.linf_violation,
            spectral_violation: act.spectral_violation,
        });
    }
    let decomp = PrecisionDecomposition::new(s / c, l / c);
    let objective = gamma * linalg::l1_norm(&decomp.s) + decomp.l.trace();
    let mut notes = Vec::new();
    if !converged && iterations == opts.max_iter {
        notes.push(format!("iteration cap {} reached", opts.max_iter));
    }
    if violation > CONSTRAINT_TOL {
        notes.push(format!("constraints violated by {violation:e}"));
    }
    let mut extras = BTreeMap::new();
    extras.insert("linf_activity".to_string(), act.linf);
    extras.insert("spectral_activity".to_string(), act.spectral);
    extras.insert("linf_violation".to_string(), act.linf_violation);
    extras.insert("spectral_violation".to_string(), act.spectral_violation);
    extras.insert("final_penalty".to_string(), penalty.rho);
    if violation <= CONSTRAINT_TOL {
        let bound = dual_bound(&work, &ua, &ub, penalty.rho, reg) / c;
        extras.insert("duality_gap".to_string(), objective - bound);
    }
    Ok(FitReport {
        estimator: "dantzig".to_string(),
        decomp,
        objective,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        converged,
        history,
        init: None,
        notes,
        extras,
    })
}

/// Lower bound on the optimal value from the multipliers of the two residual copies.
///
/// With `Y = Y_A + Y_B` and `M = sym(ΣY)`, any pair with `‖M‖_∞ ≤ γ` and `M ⪯ I` certifies
/// `-tr Y - γλ‖Y_A‖₁ - λ‖Y_B‖_*`. The ADMM multipliers are shrunk onto that set first.
fn dual_bound(sigma: &Matrix, ua: &Matrix, ub: &Matrix, rho: f64, reg: &RegularizationParams) -> f64 {
    let ya = ua * -rho;
    let yb = ub * -rho;
    let y = &ya + &yb;
    let m = linalg::symmetrize(&(sigma * &y));
    let excess = (linalg::linf_norm(&m) / reg.gamma).max(SymEigen::new(&m).max()).max(1.0);
    let nuclear = yb.svd(false, false).singular_values.sum();
    (-y.trace() - reg.sparse_weight() * linalg::l1_norm(&ya) - reg.lambda * nuclear) / excess
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Feasibility {
    Certain,
    Impossible,
    Unknown,
}

/// Settles feasibility up front where it can be proved. An invertible `Σ` admits `S - L = Σ⁻¹`
/// with zero residual; a singular one forces `‖R‖₂ ≥ 1`, and the origin (`R = -I`) is feasible
/// exactly when both radii reach 1.
fn classify(sigma: &Matrix, reg: &RegularizationParams) -> Feasibility {
    let eig = SymEigen::new(sigma);
    let (lo, hi) = (eig.min(), eig.max());
    if hi > 0.0 && lo > 1e-10 * hi {
        Feasibility::Certain
    } else if reg.lambda < 1.0 {
        Feasibility::Impossible
    } else if reg.sparse_weight() >= 1.0 {
        Feasibility::Certain
    } else {
        Feasibility::Unknown
    }
}

/// The primal residual stopped improving over the last quarter of the run.
fn stalled(history: &[IterRecord]) -> bool {
    let n = history.len();
    if n < 40 {
        return false;
    }
    let mark = history[3 * n / 4].primal_residual;
    let last = history[n - 1].primal_residual;
    last >= 0.5 * mark
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov(m: Matrix) -> SampleCovariance {
        SampleCovariance::new(m, 100).unwrap()
    }

    fn opts() -> SolverOptions {
        SolverOptions::default().with_tol(1e-9).with_max_iter(20_000)
    }

    #[test]
    fn scalar_zero_solution_when_origin_is_feasible() {
        let reg = RegularizationParams::new(1.0, 1.0).unwrap();
        let fit = fit_dantzig(&cov(Matrix::from_element(1, 1, 1.0)), &reg, &opts()).unwrap();
        assert!(fit.converged, "{:?}", fit.notes);
        assert!(fit.decomp.s[(0, 0)].abs() < 1e-6);
        assert!(fit.decomp.l[(0, 0)].abs() < 1e-6);
        assert!(fit.objective.abs() < 1e-6);
    }

    #[test]
    fn scalar_linear_program() {
        let reg = RegularizationParams::new(0.5, 1.0).unwrap();
        let fit = fit_dantzig(&cov(Matrix::from_element(1, 1, 1.0)), &reg, &opts()).unwrap();
        assert!(fit.converged, "{:?}", fit.notes);
        assert!((fit.decomp.s[(0, 0)] - 0.5).abs() < 1e-6);
        assert!(fit.decomp.l[(0, 0)].abs() < 1e-6);
        assert!((fit.objective - 0.5).abs() < 1e-6);
        assert!((fit.extras["spectral_activity"] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn truth_bounds_the_objective_on_population_covariance() {
        let s_star = Matrix::identity(2, 2) * 2.0;
        let l_star = Matrix::from_element(2, 2, 0.5);
        let sigma = cov(linalg::pd_inverse(&(&s_star - &l_star)).unwrap());
        let resid = sigma.matrix() * (&s_star - &l_star) - Matrix::identity(2, 2);
        assert!(resid.amax() < 1e-12);
        for (lambda, gamma) in [(0.5, 0.2), (0.1, 0.5), (0.05, 1.0)] {
            let reg = RegularizationParams::new(lambda, gamma).unwrap();
            let fit = fit_dantzig(&sigma, &reg, &opts()).unwrap();
            assert!(fit.converged, "{:?}", fit.notes);
            assert!(fit.extras["linf_violation"] <= 1e-6 && fit.extras["spectral_violation"] <= 1e-6);
            let truth_value = gamma * linalg::l1_norm(&s_star) + l_star.trace();
            assert!(fit.objective <= truth_value + 1e-6);
        }
    }

    #[test]
    fn a_constraint_is_active_at_positive_optimum() {
        let a = Matrix::from_fn(4, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 / 7.0 - 0.4);
        let sigma = cov(&a * a.transpose() + Matrix::identity(4, 4) * 0.5);
        let reg = RegularizationParams::new(0.3, 0.5).unwrap();
        let fit = fit_dantzig(&sigma, &reg, &opts()).unwrap();
        assert!(fit.converged, "{:?}", fit.notes);
        assert!(fit.objective > 0.0);
        let most_active = fit.extras["linf_activity"].max(fit.extras["spectral_activity"]);
        assert!((most_active - 1.0).abs() < 1e-4, "activity {most_active}");
    }

    #[test]
    fn singular_covariance_with_small_radius_is_infeasible() {
        let sigma = cov(Matrix::from_element(2, 2, 1.0));
        let reg = RegularizationParams::new(0.5, 1.0).unwrap();
        let err = fit_dantzig(&sigma, &reg, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ConstraintsInfeasible { .. }), "{err:?}");
    }

    #[test]
    fn zero_lambda_is_rejected() {
        let reg = RegularizationParams::new(0.0, 1.0).unwrap();
        assert!(fit_dantzig(&cov(Matrix::identity(2, 2)), &reg, &opts()).is_err());
    }

    #[test]
    fn singular_covariance_accepts_the_origin_once_both_radii_reach_one() {
        let sigma = cov(Matrix::from_element(2, 2, 1.0));
        let reg = RegularizationParams::new(1.0, 1.0).unwrap();
        let fit = fit_dantzig(&sigma, &reg, &opts()).unwrap();
        assert!(fit.objective.abs() < 1e-6, "{}", fit.objective);
    }

    #[test]
    fn invertible_covariance_is_never_declared_infeasible() {
        // Tiny radii make the run slow, but Σ⁻¹ is always a feasible point.
        let sigma = cov(Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 0.2])));
        let reg = RegularizationParams::new(1e-3, 0.1).unwrap();
        let fit = fit_dantzig(&sigma, &reg, &SolverOptions::default().with_max_iter(50)).unwrap();
        assert_eq!(fit.iterations, 50);
    }

    #[test]
    fn duality_gap_is_small_and_nonnegative_at_convergence() {
        let s_star = Matrix::identity(3, 3) * 2.0;
        let l_star = Matrix::from_element(3, 3, 0.4);
        let sigma = cov(linalg::pd_inverse(&(&s_star - &l_star)).unwrap());
        for (lambda, gamma) in [(0.5, 0.2), (0.1, 0.5), (0.2, 1.0)] {
            let reg = RegularizationParams::new(lambda, gamma).unwrap();
            let fit = fit_dantzig(&sigma, &reg, &opts()).unwrap();
            assert!(fit.converged, "{:?}", fit.notes);
            // The point may sit up to CONSTRAINT_TOL outside the set, and the objective can undershoot
            // by that times the multiplier size, so weak duality holds only loosely.
            let gap = fit.extras["duality_gap"];
            let scale = fit.objective.max(1.0);
            assert!(gap.abs() <= 1e-5 * scale, "gap {gap:e} at objective {}", fit.objective);
        }
    }
}
