//! Gaussian semantics: sample covariances, the log-likelihood, the penalized objective and
//! Schur-complement marginalization of a joint precision matrix.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SymEigen};

/// Inputs whose relative asymmetry exceeds this are symmetrized with a warning.
pub const ASYMMETRY_WARN: f64 = 1e-8;
/// Default PSD tolerance on the low-rank component.
pub const PSD_TOL: f64 = 1e-8;

/// Symmetric PSD `p x p` covariance together with its sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    matrix: Matrix,
    n: usize,
}

impl SampleCovariance {
    /// Validates and symmetrizes `matrix`. Eigenvalues below `-1e-10 * max(1, λmax)` are rejected.
    pub fn new(matrix: Matrix, n: usize) -> Result<Self> {
        linalg::ensure_square(&matrix)?;
        if n == 0 {
            return Err(Error::NoSamples);
        }
        let matrix = ingest_symmetric(matrix, "covariance");
        let eig = SymEigen::new(&matrix);
        if eig.values.len() > 0 && eig.min() < -1e-10 * eig.max().max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: eig.min() });
        }
        Ok(SampleCovariance { matrix, n })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    /// Smallest and largest eigenvalue.
    pub fn spectrum_bounds(&self) -> (f64, f64) {
        let eig = SymEigen::new(&self.matrix);
        (eig.min(), eig.max())
    }

    /// `cΣ` for `c > 0`; scaling preserves every invariant so no re-validation is needed.
    pub(crate) fn scaled(&self, c: f64) -> SampleCovariance {
        debug_assert!(c > 0.0);
        SampleCovariance { matrix: &self.matrix * c, n: self.n }
    }

    /// `Σ⁻¹`, refusing covariances whose smallest eigenvalue is below `1e-10` times the largest.
    pub fn inverse(&self) -> Result<Matrix> {
        let eig = SymEigen::new(&self.matrix);
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 1e-10 * hi) || hi <= 0.0 {
            return Err(Error::SingularCovariance { min_eigenvalue: lo, max_eigenvalue: hi });
        }
        Ok(eig.map(|d| 1.0 / d))
    }
}

/// Symmetrizes, warning when the input was noticeably asymmetric.
pub(crate) fn ingest_symmetric(m: Matrix, what: &str) -> Matrix {
    let asym = linalg::relative_asymmetry(&m);
    if asym > ASYMMETRY_WARN {
        warn!("{what} is asymmetric (relative {asym:e}); using (M + Mᵀ)/2");
    }
    linalg::symmetrize(&m)
}

/// Candidate pair `(S, L)` with precision `K = S - L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionDecomposition {
    pub s: Matrix,
    pub l: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Infeasibility {
    DimensionMismatch,
    LowRankNotPsd { min_eigenvalue: f64 },
    PrecisionNotPd { min_eigenvalue: f64 },
}

impl std::fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Infeasibility::DimensionMismatch => write!(f, "S and L have different shapes"),
            Infeasibility::LowRankNotPsd { min_eigenvalue } => {
                write!(f, "L is not PSD (smallest eigenvalue {min_eigenvalue:e})")
            }
            Infeasibility::PrecisionNotPd { min_eigenvalue } => {
                write!(f, "S - L is not PD (smallest eigenvalue {min_eigenvalue:e})")
            }
        }
    }
}

impl PrecisionDecomposition {
    pub fn new(s: Matrix, l: Matrix) -> Self {
        PrecisionDecomposition { s, l }
    }

    pub fn sparse_only(s: Matrix) -> Self {
        let p = s.nrows();
        PrecisionDecomposition { s, l: Matrix::zeros(p, p) }
    }

    pub fn p(&self) -> usize {
        self.s.nrows()
    }

    pub fn precision(&self) -> Matrix {
        &self.s - &self.l
    }

    /// Checks `L ⪰ -psd_tol·I` and `S - L ≻ 0`.
    pub fn feasibility(&self, psd_tol: f64) -> std::result::Result<(), Infeasibility> {
        if self.s.shape() != self.l.shape() || self.s.nrows() != self.s.ncols() {
            return Err(Infeasibility::DimensionMismatch);
        }
        let lmin = linalg::min_eigenvalue(&self.l);
        if lmin < -psd_tol {
            return Err(Infeasibility::LowRankNotPsd { min_eigenvalue: lmin });
        }
        let kmin = linalg::min_eigenvalue(&self.precision());
        if !(kmin > 0.0) {
            return Err(Infeasibility::PrecisionNotPd { min_eigenvalue: kmin });
        }
        Ok(())
    }

    pub fn is_feasible(&self) -> bool {
        self.feasibility(PSD_TOL).is_ok()
    }
}

/// `(λ, γ)`: overall penalty strength and the sparse/low-rank trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    pub lambda: f64,
    pub gamma: f64,
}

impl RegularizationParams {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(RegularizationParams { lambda, gamma })
    }

    /// Weight on `‖S‖₁`.
    pub fn sparse_weight(&self) -> f64 {
        self.lambda * self.gamma
    }
}

/// `ℓ(K; Σ) = log det K - tr(KΣ)`.
pub fn gaussian_log_likelihood(k: &Matrix, sigma: &SampleCovariance) -> Result<f64> {
    linalg::ensure_dim(k, sigma.p())?;
    let eig = SymEigen::new(k);
    let min = eig.min();
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let logdet: f64 = eig.values.iter().map(|d| d.ln()).sum();
    Ok(logdet - linalg::trace_product(k, sigma.matrix()))
}

/// Penalized objective value, or `+∞` with the reason the point is outside the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub infeasibility: Option<Infeasibility>,
}

impl Objective {
    pub fn is_feasible(&self) -> bool {
        self.infeasibility.is_none()
    }
}

/// `-ℓ(S - L; Σ) + λ(γ‖S‖₁ + tr L)` where `‖S‖₁` sums all `p²` absolute entries.
pub fn objective_value(
    decomp: &PrecisionDecomposition,
    sigma: &SampleCovariance,
    reg: &RegularizationParams,
) -> Objective {
    let infeasible = |why| Objective { value: f64::INFINITY, infeasibility: Some(why) };
    if decomp.s.shape() != (sigma.p(), sigma.p()) {
        return infeasible(Infeasibility::DimensionMismatch);
    }
    if let Err(why) = decomp.feasibility(PSD_TOL) {
        return infeasible(why);
    }
    match gaussian_log_likelihood(&decomp.precision(), sigma) {
        Ok(ll) => Objective {
            value: -ll + reg.lambda * (reg.gamma * linalg::l1_norm(&decomp.s) + decomp.l.trace()),
            infeasibility: None,
        },
        Err(_) => infeasible(Infeasibility::PrecisionNotPd {
            min_eigenvalue: linalg::min_eigenvalue(&decomp.precision()),
        }),
    }
}

/// Blocks of a marginalized joint precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    /// `K_OO - K_OH K_HH⁻¹ K_HO`
    pub k_o: Matrix,
    /// `K_OO`
    pub s_star: Matrix,
    /// `K_OH K_HH⁻¹ K_HO`
    pub l_star: Matrix,
}

/// Marginal precision of the observed block via the Schur complement.
pub fn marginal_precision(k_joint: &Matrix, observed: &[usize], latent: &[usize]) -> Result<Marginal> {
    let total = linalg::ensure_square(k_joint)?;
    let mut seen = vec![false; total];
    for &i in observed.iter().chain(latent) {
        if i >= total {
            return Err(Error::IndexSets(format!("index {i} out of range for {total} variables")));
        }
        if seen[i] {
            return Err(Error::IndexSets(format!("index {i} appears more than once")));
        }
        seen[i] = true;
    }
    if observed.len() + latent.len() != total {
        return Err(Error::IndexSets(format!(
            "{} observed + {} latent indices do not cover {total} variables",
            observed.len(),
            latent.len()
        )));
    }
    let k = linalg::symmetrize(k_joint);
    let block = |rows: &[usize], cols: &[usize]| {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| k[(rows[i], cols[j])])
    };
    let s_star = block(observed, observed);
    let p = observed.len();
    if latent.is_empty() {
        return Ok(Marginal { k_o: s_star.clone(), s_star, l_star: Matrix::zeros(p, p) });
    }
    let k_hh = SymEigen::new(&block(latent, latent));
    let (lo, hi) = (k_hh.min(), k_hh.max());
    if !(lo > 1e-14 * hi.abs().max(1.0)) {
        return Err(Error::SingularLatentBlock { min_eigenvalue: lo });
    }
    let k_oh = block(observed, latent);
    let l_star = linalg::symmetrize(&(&k_oh * k_hh.map(|d| 1.0 / d) * k_oh.transpose()));
    let k_o = &s_star - &l_star;
    Ok(Marginal { k_o, s_star, l_star })
}

/// `(1/n) Σ xᵢxᵢᵀ` (zero-mean convention). With `center`, subtracts the column means and
/// divides by `n - 1` instead.
pub fn sample_covariance(samples: &Matrix, center: bool) -> Result<SampleCovariance> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::NoSamples);
    }
    let cov = if center {
        if n < 2 {
            return Err(Error::InvalidParameter("mean-centering needs at least 2 samples".into()));
        }
        let mean = samples.row_mean();
        let mut centered = samples.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        centered.tr_mul(&centered) / (n as f64 - 1.0)
    } else {
        samples.tr_mul(samples) / n as f64
    };
    SampleCovariance::new(cov, n)
}
