use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("sample matrix has no rows")]
    NoSamples,

    #[error("invalid index sets: {0}")]
    IndexSets(String),

    #[error("latent block K_HH is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularLatentBlock { min_eigenvalue: f64 },

    #[error(
        "covariance is singular (eigenvalues in [{min_eigenvalue:e}, {max_eigenvalue:e}]); \
         this estimator needs an invertible covariance, i.e. more samples than variables (n > p)"
    )]
    SingularCovariance { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible decomposition: {0}")]
    Infeasible(String),

    #[error(
        "objective increased at outer iteration {iteration} ({before:.12e} -> {after:.12e}); \
         aborting on numerical failure"
    )]
    NonDescent { iteration: usize, before: f64, after: f64 },

    #[error(
        "constraint set is empty: l-inf violation {linf_violation:e} \
         and spectral violation {spectral_violation:e}"
    )]
    ConstraintsInfeasible { linf_violation: f64, spectral_violation: f64 },

    #[error("gamma grid is not sorted in increasing order (position {0})")]
    UnsortedGrid(usize),

    #[error("unknown estimator '{0}'")]
    UnknownEstimator(String),

    #[error("model document rejected: {0}")]
    InvalidModel(String),
}
