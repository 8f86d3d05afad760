//! Rank-constrained alternating minimization of
//!
//! ```text
//! minimize  -log det(S - L) + tr((S - L)Σ) + λ‖S‖₁   s.t.  S - L ≻ 0,  L ⪰ 0,  rank L ≤ r
//! ```
//!
//! Each outer iteration solves the convex problem in `S` with `L` held fixed, then takes
//! projected-gradient steps in `L` onto the set of PSD matrices of rank at most `r`. Both
//! half-steps are only accepted when they lower the objective, so the outer trace is monotone.
//! The problem is nonconvex; different starting points can end in different local optima.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::gaussian::{PrecisionDecomposition, SampleCovariance, PSD_TOL};
use crate::linalg::{self, Matrix, SymEigen};
use crate::prox;
use crate::solver::{covariance_scale, diagonal_start, neg_loglik_fast, FitReport, IterRecord, SolverOptions};

/// Upper bound `r` on `rank L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankConstraint {
    pub r: usize,
}

impl RankConstraint {
    pub fn new(r: usize) -> Self {
        RankConstraint { r }
    }
}

const INNER_MAX_ITER: usize = 500;
const GRADIENT_STEPS: usize = 10;
const MAX_BACKTRACKS: usize = 60;
const DESCENT_SLACK: f64 = 1e-9;

struct Problem<'a> {
    sigma: &'a SampleCovariance,
    weight: f64,
    rank: usize,
}

impl Problem<'_> {
    fn objective(&self, s: &Matrix, l: &Matrix) -> f64 {
        neg_loglik_fast(&(s - l), self.sigma).map_or(f64::INFINITY, |nll| nll + self.weight * linalg::l1_norm(s))
    }

    fn smooth(&self, s: &Matrix, l: &Matrix) -> Option<f64> {
        neg_loglik_fast(&(s - l), self.sigma)
    }

    /// ℓ1-penalized likelihood in `S` for fixed `L`, by ADMM on `Z = R + L` with `R` the
    /// precision. `dual` carries the scaled multiplier across outer iterations as a warm start.
    fn sparse_step(&self, s: &Matrix, l: &Matrix, dual: &mut Matrix, tol: f64) -> Matrix {
        let rho = 1.0;
        let mut z = s.clone();
        for _ in 0..INNER_MAX_ITER {
            let r = prox::logdet_prox(&(&z - l - &*dual), self.sigma, rho);
            let v = &r + l + &*dual;
            let z_next = prox::soft_threshold_entrywise(&v, self.weight / rho);
            let gap = &r + l - &z_next;
            *dual += &gap;
            let scale = r.norm().max(1.0);
            let (primal, change) = (gap.norm() / scale, rho * (&z_next - &z).norm() / scale);
            z = z_next;
            if primal <= tol && change <= tol {
                break;
            }
        }
        z
    }

    /// A few backtracking projected-gradient steps in `L`. Returns the new `L` and the last
    /// accepted step size.
    fn lowrank_step(&self, s: &Matrix, l: &Matrix, mut step: f64) -> (Matrix, f64) {
        let mut l = l.clone();
        let Some(mut f) = self.smooth(s, &l) else {
            return (l, step);
        };
        for _ in 0..GRADIENT_STEPS {
            let Ok(k_inv) = linalg::pd_inverse(&(s - &l)) else {
                break;
            };
            let grad = k_inv - self.sigma.matrix();
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let cand = prox::psd_rank_projection(&(&l - &grad * step), self.rank);
                let delta = &cand - &l;
                if let Some(fc) = self.smooth(s, &cand) {
                    let model = f + linalg::trace_product(&grad, &delta) + delta.norm_squared() / (2.0 * step);
                    if fc <= model && fc <= f {
                        accepted = Some((cand, fc, delta.norm()));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((cand, fc, moved)) = accepted else {
                break;
            };
            let done = moved <= 1e-14 * l.norm().max(1.0);
            l = cand;
            f = fc;
            step *= 2.0;
            if done {
                break;
            }
        }
        (l, step)
    }
}

/// Feasible random start: diagonal `S` with a random rank-`r` PSD `L` that keeps `S - L ≻ 0`.
pub fn random_init(sigma: &SampleCovariance, rank: RankConstraint, seed: u64) -> Result<PrecisionDecomposition> {
    let p = sigma.p();
    if rank.r > p {
        return Err(Error::InvalidParameter(format!("rank {} exceeds dimension {p}", rank.r)));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let s = diagonal_start(sigma, 0.0);
    let factor = Matrix::from_fn(p, rank.r, |_, _| rng.gen::<f64>() - 0.5);
    let l = &factor * factor.transpose();
    // Scale L to half of the smallest diagonal precision so S - L stays well inside the domain.
    let smin = (0..p).map(|i| s[(i, i)]).fold(f64::INFINITY, f64::min);
    let lmax = SymEigen::new(&l).max();
    let l = if lmax > 0.0 { l * (0.5 * smin / lmax) } else { l };
    Ok(PrecisionDecomposition::new(s, l))
}

fn check_init(init: &PrecisionDecomposition, p: usize, rank: usize) -> Result<()> {
    linalg::ensure_dim(&init.s, p)?;
    linalg::ensure_dim(&init.l, p)?;
    init.feasibility(PSD_TOL).map_err(|why| Error::Infeasible(format!("initial point: {why}")))?;
    let eig = SymEigen::new(&init.l);
    let cutoff = 1e-9 * eig.max().max(1.0);
    let init_rank = eig.values.iter().filter(|&&d| d > cutoff).count();
    if init_rank > rank {
        return Err(Error::Infeasible(format!("initial L has rank {init_rank}, above the cap {rank}")));
    }
    Ok(())
}

/// Alternating minimization for the rank-constrained program.
///
/// `init` defaults to the diagonal start `S = diag(1/Σᵢᵢ)`, `L = 0`; the report's `init` field
/// records which one was used. Each outer iteration is checked for descent and a numerical
/// failure aborts with [`Error::NonDescent`].
pub fn fit_em_rank(
    sigma: &SampleCovariance,
    lambda: f64,
    rank: RankConstraint,
    init: Option<&PrecisionDecomposition>,
    opts: &SolverOptions,
) -> Result<FitReport> {
    opts.validate()?;
    let p = sigma.p();
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if rank.r > p {
        return Err(Error::InvalidParameter(format!("rank {} exceeds dimension {p}", rank.r)));
    }
    if lambda == 0.0 {
        sigma.inverse()?;
    }
    let (s0, l0, label) = match init {
        Some(d) => {
            check_init(d, p, rank.r)?;
            (d.s.clone(), d.l.clone(), "user")
        }
        None => (diagonal_start(sigma, lambda), Matrix::zeros(p, p), "diagonal"),
    };

    // Work on Σ/c: solutions scale by c and the objective shifts by p·ln c.
    let c = covariance_scale(sigma);
    let work = sigma.scaled(1.0 / c);
    let shift = p as f64 * c.ln();
    let problem = Problem { sigma: &work, weight: lambda / c, rank: rank.r };
    let mut s = s0 * c;
    let mut l = if rank.r == 0 { Matrix::zeros(p, p) } else { l0 * c };
    let mut dual = Matrix::zeros(p, p);
    let mut step = 1.0;
    let tol = opts.tol_primal.min(opts.tol_dual);

    let mut f = problem.objective(&s, &l);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let (mut ds, mut dl) = (f64::INFINITY, f64::INFINITY);

    for k in 1..=opts.max_iter {
        iterations = k;
        let before = f;

        let s_cand = problem.sparse_step(&s, &l, &mut dual, tol);
        let f_cand = problem.objective(&s_cand, &l);
        let s_next = if f_cand < f { f = f_cand; s_cand } else { s.clone() };

        let l_next = if rank.r == 0 {
            l.clone()
        } else {
            let (l_cand, next_step) = problem.lowrank_step(&s_next, &l, step);
            step = next_step;
            let f_cand = problem.objective(&s_next, &l_cand);
            if f_cand <= f {
                f = f_cand;
                l_cand
            } else {
                l.clone()
            }
        };

        if f > before + DESCENT_SLACK * before.abs().max(1.0) {
            return Err(Error::NonDescent { iteration: k, before: before + shift, after: f + shift });
        }
        let scale = (&s_next - &l_next).norm().max(1.0);
        ds = (&s_next - &s).norm() / scale;
        dl = (&l_next - &l).norm() / scale;
        s = s_next;
        l = l_next;
        history.push(IterRecord { objective: f + shift, merit: f + shift, primal_residual: ds, dual_residual: dl });

        let decrease = (before - f) / before.abs().max(1.0);
        if ds <= tol && dl <= tol && decrease <= tol {
            converged = true;
            break;
        }
    }

    let decomp = PrecisionDecomposition::new(s / c, l / c);
    let mut notes = Vec::new();
    let kmin = linalg::min_eigenvalue(&decomp.precision());
    if kmin < opts.feasibility_floor {
        notes.push(format!("S - L has smallest eigenvalue {kmin:e}, below the feasibility floor"));
        converged = false;
    }
    if !converged && iterations == opts.max_iter {
        notes.push(format!("iteration cap {} reached", opts.max_iter));
    }
    let mut extras = BTreeMap::new();
    extras.insert("rank_cap".to_string(), rank.r as f64);
    extras.insert("min_eigenvalue_precision".to_string(), kmin);
    Ok(FitReport {
        estimator: "em".to_string(),
        decomp,
        objective: f + shift,
        iterations,
        primal_residual: ds,
        dual_residual: dl,
        converged,
        history,
        init: Some(label.to_string()),
        notes,
        extras,
    })
}
