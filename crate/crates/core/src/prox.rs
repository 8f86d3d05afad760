//! Closed-form proximal kernels and projections.
//!
//! Every kernel here returns a fresh matrix and leaves its input untouched.

use crate::gaussian::SampleCovariance;
use crate::linalg::{self, Matrix, SymEigen};

/// Prox of `τ‖·‖₁`: `m ↦ sign(m)·max(|m| - τ, 0)`. Entries with `|m| == τ` map to zero.
pub fn soft_threshold_entrywise(m: &Matrix, tau: f64) -> Matrix {
    debug_assert!(tau >= 0.0);
    m.map(|v| soft(v, tau))
}

#[inline]
pub(crate) fn soft(v: f64, tau: f64) -> f64 {
    let mag = v.abs() - tau;
    if mag > 0.0 {
        mag.copysign(v)
    } else {
        0.0
    }
}

/// Keeps entries with `|m| > tau`, zeroes the rest.
pub fn hard_threshold_entrywise(m: &Matrix, tau: f64) -> Matrix {
    m.map(|v| if v.abs() > tau { v } else { 0.0 })
}

/// Projection onto the entrywise box `[-radius, radius]`.
pub fn clip_entrywise(m: &Matrix, radius: f64) -> Matrix {
    m.map(|v| v.clamp(-radius, radius))
}

/// Prox of `τ·tr(·)` on the PSD cone: eigenvalues `d ↦ max(d - τ, 0)`.
pub fn psd_trace_prox(m: &Matrix, tau: f64) -> Matrix {
    debug_assert!(tau >= 0.0);
    SymEigen::new(m).map(|d| (d - tau).max(0.0))
}

/// Best PSD approximation of rank at most `rank`: keeps the `rank` largest nonnegative
/// eigenvalues and zeroes everything else.
pub fn psd_rank_projection(m: &Matrix, rank: usize) -> Matrix {
    let eig = SymEigen::new(m);
    let p = eig.values.len();
    let keep_from = p.saturating_sub(rank);
    let values = nalgebra::DVector::from_fn(p, |k, _| {
        if k >= keep_from {
            eig.values[k].max(0.0)
        } else {
            0.0
        }
    });
    linalg::reconstruct(&eig.vectors, &values)
}

/// Projection of a general square matrix onto the spectral-norm ball of radius `radius`.
pub fn clip_singular_values(m: &Matrix, radius: f64) -> Matrix {
    let svd = m.clone().svd(true, true);
    if svd.singular_values.iter().all(|&s| s <= radius) {
        return m.clone();
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut us = u;
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= svd.singular_values[j].min(radius);
    }
    us * v_t
}

/// `argmin_R -log det R + tr(RΣ) + (ρ/2)‖R - W‖²_F`.
///
/// With `ρW - Σ = Q diag(λ) Qᵀ` the minimizer is `Q diag((λᵢ + √(λᵢ² + 4ρ)) / 2ρ) Qᵀ`, which is
/// positive definite for every symmetric `W`.
pub fn logdet_prox(w: &Matrix, sigma: &SampleCovariance, rho: f64) -> Matrix {
    debug_assert!(rho > 0.0);
    let eig = SymEigen::new(&(w * rho - sigma.matrix()));
    eig.map(|l| logdet_root(l, rho))
}

/// Positive root of `ρr - 1/r = l`, computed without cancellation for large negative `l`.
#[inline]
pub(crate) fn logdet_root(l: f64, rho: f64) -> f64 {
    let disc = (l * l + 4.0 * rho).sqrt();
    if l >= 0.0 {
        (l + disc) / (2.0 * rho)
    } else {
        2.0 / (disc - l)
    }
}
