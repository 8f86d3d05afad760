//! JSON report documents. `S` is stored as upper-triangle triplets and `L` as its eigenpairs
//! above the rank cutoff; both rebuild into a validated decomposition.

use std::collections::BTreeMap;

use lvgm::diagnostics::{KktResiduals, RecoveryMetrics, StabilitySummary};
use lvgm::linalg::{Matrix, SymEigen};
use lvgm::{FitReport, PrecisionDecomposition};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTriplets {
    pub p: usize,
    /// `(i, j, value)` with `i ≤ j`, zero-based, exact zeros omitted.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseTriplets {
    pub fn from_matrix(m: &Matrix) -> Self {
        let p = m.nrows();
        let entries = (0..p)
            .flat_map(|i| (i..p).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, m[(i, j)]))
            .filter(|e| e.2 != 0.0)
            .collect();
        SparseTriplets { p, entries }
    }

    pub fn to_matrix(&self) -> CliResult<Matrix> {
        let mut m = Matrix::zeros(self.p, self.p);
        for &(i, j, v) in &self.entries {
            if i > j || j >= self.p || !v.is_finite() {
                return Err(CliError::Usage(format!("bad triplet ({i}, {j}, {v}) for p = {}", self.p)));
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankFactors {
    pub p: usize,
    /// Eigenvalues at or below `rank_tol·λmax` are dropped.
    pub rank_tol: f64,
    /// Descending by eigenvalue.
    pub eigenpairs: Vec<EigenPair>,
}

impl LowRankFactors {
    pub fn from_matrix(l: &Matrix, rank_tol: f64) -> Self {
        let p = l.nrows();
        let eig = SymEigen::new(l);
        let cutoff = rank_tol * eig.max().max(1e-12);
        let eigenpairs = (0..eig.values.len())
            .rev()
            .filter(|&k| eig.values[k] > cutoff)
            .map(|k| EigenPair { value: eig.values[k], vector: eig.vectors.column(k).iter().copied().collect() })
            .collect();
        LowRankFactors { p, rank_tol, eigenpairs }
    }

    pub fn rank(&self) -> usize {
        self.eigenpairs.len()
    }

    pub fn to_matrix(&self) -> CliResult<Matrix> {
        let mut m = Matrix::zeros(self.p, self.p);
        for pair in &self.eigenpairs {
            if pair.vector.len() != self.p || !(pair.value >= 0.0) {
                return Err(CliError::Usage(format!("bad eigenpair (value {}) for p = {}", pair.value, self.p)));
            }
            let v = nalgebra::DVector::from_column_slice(&pair.vector);
            m += &v * v.transpose() * pair.value;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub estimator: String,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    /// `null` when the estimate lies outside the likelihood domain.
    pub objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Stationarity residuals of the penalized likelihood at `(lambda, gamma)`.
    pub kkt: Option<KktResiduals>,
    pub s: SparseTriplets,
    pub l: LowRankFactors,
    pub metrics: Option<RecoveryMetrics>,
    pub init: Option<String>,
    pub notes: Vec<String>,
    pub extras: BTreeMap<String, f64>,
    /// `null` with `--no-timing` so reports are byte-reproducible.
    pub wall_time_ms: Option<f64>,
}

impl FitDocument {
    pub fn new(fit: &FitReport, lambda: Option<f64>, gamma: Option<f64>, rank_tol: f64) -> Self {
        FitDocument {
            estimator: fit.estimator.clone(),
            lambda,
            gamma,
            objective: fit.objective.is_finite().then_some(fit.objective),
            iterations: fit.iterations,
            converged: fit.converged,
            primal_residual: fit.primal_residual,
            dual_residual: fit.dual_residual,
            kkt: None,
            s: SparseTriplets::from_matrix(&fit.decomp.s),
            l: LowRankFactors::from_matrix(&fit.decomp.l, rank_tol),
            metrics: None,
            init: fit.init.clone(),
            notes: fit.notes.clone(),
            extras: fit.extras.clone(),
            wall_time_ms: None,
        }
    }

    /// Rebuilds `(S, L)` and checks `S` symmetric finite, `L ⪰ 0` and `S - L ≻ 0`.
    pub fn decomposition(&self) -> CliResult<PrecisionDecomposition> {
        if self.s.p != self.l.p {
            return Err(CliError::Usage(format!("S is {0}x{0} but L is {1}x{1}", self.s.p, self.l.p)));
        }
        let d = PrecisionDecomposition::new(self.s.to_matrix()?, self.l.to_matrix()?);
        d.feasibility(lvgm::gaussian::PSD_TOL)
            .map_err(|why| CliError::Core(lvgm::Error::Infeasible(why.to_string())))?;
        Ok(d)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda_index: usize,
    pub gamma_index: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub fit: Option<FitDocument>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowStability {
    pub lambda: f64,
    pub summary: Option<StabilitySummary>,
    /// Cells of this row that failed and were left out of the summary.
    pub failed_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub estimator: String,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Row-major: λ outer, γ inner.
    pub cells: Vec<SweepCell>,
    pub stability: Vec<RowStability>,
    pub wall_time_ms: Option<f64>,
}
