//! The harness operations, independent of argument parsing so tests can drive them directly.

use std::time::Instant;

use lvgm::composite::composite_norm;
use lvgm::diagnostics::{
    default_zero_tol, gamma_stability, identifiability_report, kkt_report, numerical_rank, recovery_metrics,
    sign_pattern, signal_levels, IdentifiabilityReport, KktResiduals, RecoveryMetrics, SignalLevels,
    DEFAULT_RANK_TOL,
};
use lvgm::estimators::{random_init, RankConstraint, ThresholdMode, ThresholdParams};
use lvgm::gaussian::objective_value;
use lvgm::linalg::Matrix;
use lvgm::synth::{draw_samples, generate_latent_model, GeneratorParams, SyntheticModel};
use lvgm::{
    EstimatorConfig, EstimatorRegistry, FitReport, PrecisionDecomposition, RegularizationParams, SampleCovariance,
    SolverOptions,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::grid::ensure_increasing;
use crate::report::{FitDocument, LowRankFactors, RowStability, SparseTriplets, SweepCell, SweepDocument};

/// Support cutoff used for sign patterns when no ground truth fixes one.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub estimator: String,
    pub rank: Option<usize>,
    pub t_sparse: Option<f64>,
    pub t_spectral: Option<f64>,
    pub opts: SolverOptions,
    /// Random starting point for `em`; the diagonal start is used otherwise.
    pub seed: Option<u64>,
    pub rank_tol: f64,
    /// Support cutoff; defaults to `1e-6·max|S*|` with a truth and [`DEFAULT_ZERO_TOL`] without.
    pub zero_tol: Option<f64>,
    pub timing: bool,
}

impl FitSettings {
    pub fn new(estimator: &str) -> Self {
        FitSettings {
            estimator: estimator.to_string(),
            rank: None,
            t_sparse: None,
            t_spectral: None,
            opts: SolverOptions::default(),
            seed: None,
            rank_tol: DEFAULT_RANK_TOL,
            zero_tol: None,
            timing: true,
        }
    }

    fn zero_tol(&self, truth: Option<&PrecisionDecomposition>) -> f64 {
        self.zero_tol.unwrap_or_else(|| truth.map_or(DEFAULT_ZERO_TOL, default_zero_tol))
    }
}

/// A fit plus the document written for it.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub report: FitReport,
    pub document: FitDocument,
}

fn registry() -> EstimatorRegistry {
    EstimatorRegistry::default()
}

fn build_config(
    sigma: &SampleCovariance,
    settings: &FitSettings,
    reg: Option<RegularizationParams>,
    uses_reg: bool,
) -> CliResult<EstimatorConfig> {
    let reg = match (reg, uses_reg) {
        (Some(r), _) => r,
        (None, true) => {
            return Err(CliError::Usage(format!("estimator '{}' needs --lambda and --gamma", settings.estimator)))
        }
        // Placeholder; estimators that ignore regularization never read it.
        (None, false) => RegularizationParams::new(1.0, 1.0)?,
    };
    let mut cfg = EstimatorConfig::new(reg);
    cfg.opts = settings.opts;
    if let Some(r) = settings.rank {
        let rank = RankConstraint::new(r);
        cfg.rank = Some(rank);
        if let Some(seed) = settings.seed {
            cfg.init = Some(random_init(sigma, rank, seed)?);
        }
    }
    if settings.t_sparse.is_some() || settings.t_spectral.is_some() {
        let base = ThresholdParams::default_for(sigma);
        cfg.threshold = Some(ThresholdParams {
            t_sparse: settings.t_sparse.unwrap_or(base.t_sparse),
            t_spectral: settings.t_spectral.unwrap_or(base.t_spectral),
            sparse_mode: ThresholdMode::Hard,
            spectral_mode: ThresholdMode::Hard,
        });
    }
    Ok(cfg)
}

/// Fits one `(λ, γ)` cell, or the regularization-free estimator when both are absent.
pub fn run_fit(
    sigma: &SampleCovariance,
    settings: &FitSettings,
    lambda: Option<f64>,
    gamma: Option<f64>,
    truth: Option<&PrecisionDecomposition>,
) -> CliResult<FitOutcome> {
    let registry = registry();
    let estimator = registry.get(&settings.estimator)?;
    let uses_reg = estimator.uses_regularization();
    let reg = match (lambda, gamma) {
        (Some(l), Some(g)) if uses_reg => Some(RegularizationParams::new(l, g)?),
        (None, None) => None,
        _ if !uses_reg => None,
        _ => return Err(CliError::Usage("--lambda and --gamma must be given together".into())),
    };
    let cfg = build_config(sigma, settings, reg, uses_reg)?;

    let start = Instant::now();
    let report = estimator.fit(sigma, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let (lambda, gamma) = match reg {
        Some(r) => (Some(r.lambda), Some(r.gamma)),
        None => (None, None),
    };
    let mut document = FitDocument::new(&report, lambda, gamma, settings.rank_tol);
    if let Some(r) = reg {
        if report.decomp.is_feasible() {
            document.kkt = Some(kkt_report(sigma, &report.decomp, &r)?);
        }
    }
    if let Some(t) = truth {
        document.metrics = Some(recovery_metrics(&report.decomp, t, settings.zero_tol(Some(t)), settings.rank_tol)?);
    }
    document.wall_time_ms = settings.timing.then_some(elapsed);
    Ok(FitOutcome { report, document })
}

#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub fit: FitSettings,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub document: SweepDocument,
    pub csv: String,
}

/// Fits every `(λ, γ)` cell, concurrently when `jobs > 1`. Results are assembled by cell index,
/// so the output never depends on scheduling.
pub fn run_sweep(
    sigma: &SampleCovariance,
    settings: &SweepSettings,
    truth: Option<&PrecisionDecomposition>,
) -> CliResult<SweepOutcome> {
    let registry = registry();
    let estimator = registry.get(&settings.fit.estimator)?;
    if !estimator.uses_regularization() {
        return Err(CliError::Usage(format!(
            "estimator '{}' ignores (lambda, gamma); use fit instead of sweep",
            settings.fit.estimator
        )));
    }
    if settings.lambdas.is_empty() || settings.gammas.is_empty() {
        return Err(CliError::Usage("sweep grids must be non-empty".into()));
    }
    if let Some(bad) = settings.lambdas.iter().chain(&settings.gammas).find(|&&v| !(v > 0.0)) {
        return Err(CliError::Usage(format!("grid values must be > 0, got {bad}")));
    }
    ensure_increasing(&settings.gammas, "gamma")?;

    let cell_settings = FitSettings { timing: false, ..settings.fit.clone() };
    let indices: Vec<(usize, usize)> = (0..settings.lambdas.len())
        .flat_map(|li| (0..settings.gammas.len()).map(move |gi| (li, gi)))
        .collect();
    let run_cell = |&(li, gi): &(usize, usize)| {
        let (lambda, gamma) = (settings.lambdas[li], settings.gammas[gi]);
        let outcome = run_fit(sigma, &cell_settings, Some(lambda), Some(gamma), truth);
        let (fit, error, report) = match outcome {
            Ok(o) => (Some(o.document), None, Some(o.report)),
            Err(e) => (None, Some(e.to_string()), None),
        };
        (SweepCell { lambda_index: li, gamma_index: gi, lambda, gamma, fit, error }, report)
    };

    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<(SweepCell, Option<FitReport>)> = pool.install(|| indices.par_iter().map(run_cell).collect());
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    let zero_tol = settings.fit.zero_tol(truth);
    let ng = settings.gammas.len();
    let mut stability = Vec::with_capacity(settings.lambdas.len());
    for (li, &lambda) in settings.lambdas.iter().enumerate() {
        let row = &results[li * ng..(li + 1) * ng];
        let fits: Vec<(f64, FitReport)> =
            row.iter().filter_map(|(cell, r)| r.clone().map(|r| (cell.gamma, r))).collect();
        let summary = if fits.is_empty() {
            None
        } else {
            Some(gamma_stability(&fits, truth, zero_tol, settings.fit.rank_tol)?)
        };
        stability.push(RowStability { lambda, summary, failed_cells: ng - fits.len() });
    }

    let csv = sweep_csv(&results, zero_tol, settings.fit.rank_tol)?;
    let document = SweepDocument {
        estimator: settings.fit.estimator.clone(),
        lambdas: settings.lambdas.clone(),
        gammas: settings.gammas.clone(),
        cells: results.into_iter().map(|(cell, _)| cell).collect(),
        stability,
        wall_time_ms: settings.fit.timing.then_some(elapsed),
    };
    Ok(SweepOutcome { document, csv })
}

const CSV_HEADER: [&str; 13] = [
    "lambda",
    "gamma",
    "status",
    "objective",
    "iterations",
    "converged",
    "support_size",
    "rank",
    "sign_consistent",
    "loss_linf",
    "loss_spectral",
    "loss_frob_total",
    "error",
];

fn sweep_csv(results: &[(SweepCell, Option<FitReport>)], zero_tol: f64, rank_tol: f64) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let num = |v: f64| format!("{v:?}");
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for (cell, report) in results {
        let mut row = vec![num(cell.lambda), num(cell.gamma)];
        match (&cell.fit, report) {
            (Some(doc), Some(r)) => {
                let support = sign_pattern(&r.decomp.s, zero_tol).iter().filter(|&&s| s != 0).count();
                let m: Option<&RecoveryMetrics> = doc.metrics.as_ref();
                row.extend([
                    "ok".to_string(),
                    opt(doc.objective),
                    doc.iterations.to_string(),
                    doc.converged.to_string(),
                    support.to_string(),
                    numerical_rank(&r.decomp.l, rank_tol).to_string(),
                    m.map(|m| m.sign_consistent.to_string()).unwrap_or_default(),
                    opt(m.map(|m| m.loss_linf)),
                    opt(m.map(|m| m.loss_spectral)),
                    opt(m.map(|m| m.loss_frob_total)),
                    String::new(),
                ]);
            }
            _ => {
                row.push("error".to_string());
                row.extend(std::iter::repeat(String::new()).take(9));
                row.push(cell.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeDocument {
    pub gamma: f64,
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub s: SparseTriplets,
    pub l: LowRankFactors,
}

/// Composite norm of `m` with its optimal split.
pub fn run_decompose(m: &Matrix, gamma: f64, opts: &SolverOptions, rank_tol: f64) -> CliResult<DecomposeDocument> {
    let d = composite_norm(m, gamma, opts)?;
    Ok(DecomposeDocument {
        gamma,
        value: d.value,
        residual: d.residual,
        iterations: d.iterations,
        converged: d.converged,
        s: SparseTriplets::from_matrix(&d.s),
        l: LowRankFactors::from_matrix(&d.l, rank_tol),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseDocument {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    /// Penalized negative log-likelihood of `(S, L)`.
    pub objective: Option<f64>,
    pub kkt: Option<KktResiduals>,
    pub metrics: Option<RecoveryMetrics>,
    pub signal_levels: Option<SignalLevels>,
    pub identifiability: Option<IdentifiabilityReport>,
}

/// Certificates for a given `(S, L)`: KKT residuals when `(λ, γ)` are known and recovery metrics
/// plus truth diagnostics when a truth is supplied.
pub fn run_diagnose(
    sigma: &SampleCovariance,
    decomp: &PrecisionDecomposition,
    reg: Option<RegularizationParams>,
    truth: Option<&PrecisionDecomposition>,
    rank_tol: f64,
) -> CliResult<DiagnoseDocument> {
    let (objective, kkt) = match &reg {
        Some(r) => {
            let obj = objective_value(decomp, sigma, r);
            (obj.is_feasible().then_some(obj.value), Some(kkt_report(sigma, decomp, r)?))
        }
        None => (None, None),
    };
    let metrics = truth.map(|t| recovery_metrics(decomp, t, default_zero_tol(t), rank_tol)).transpose()?;
    Ok(DiagnoseDocument {
        lambda: reg.map(|r| r.lambda),
        gamma: reg.map(|r| r.gamma),
        objective,
        kkt,
        metrics,
        signal_levels: truth.map(signal_levels),
        identifiability: truth.map(identifiability_report),
    })
}

/// A synthetic model and, when `n > 0`, `n` samples drawn from its observed marginal.
pub fn run_generate(
    params: GeneratorParams,
    seed: u64,
    n: usize,
    sample_seed: u64,
) -> CliResult<(SyntheticModel, Option<Matrix>)> {
    let model = generate_latent_model(params, seed)?;
    let samples = if n > 0 { Some(draw_samples(&model, n, sample_seed)?) } else { None };
    Ok((model, samples))
}
