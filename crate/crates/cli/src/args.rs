//! Argument definitions and dispatch. Exit status: 0 converged, 2 not converged, 1 error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lvgm::diagnostics::DEFAULT_RANK_TOL;
use lvgm::synth::GeneratorParams;
use lvgm::{PrecisionDecomposition, RegularizationParams, SolverOptions};

use crate::error::{CliError, CliResult};
use crate::grid::parse_grid;
use crate::io::{self, Input, InputFormat, ReadOptions};
use crate::report::{to_json, FitDocument};
use crate::run::{self, FitSettings, SweepSettings};

#[derive(Debug, Parser)]
#[command(name = "lvgm", version, about = "Sparse plus low-rank precision estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic latent-variable model and optionally samples from it
    Generate(GenerateArgs),
    /// Fit one estimator at one (lambda, gamma)
    Fit(FitArgs),
    /// Fit every cell of a (lambda, gamma) grid
    Sweep(SweepArgs),
    /// Composite norm of a symmetric matrix and its optimal sparse/low-rank split
    Decompose(DecomposeArgs),
    /// KKT residuals and recovery metrics for a given (S, L)
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Data file: samples, a covariance or a model document
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv-samples")]
    pub format: InputFormat,
    /// Skip one header line of CSV input
    #[arg(long)]
    pub header: bool,
    /// Mean-center samples (divides by n - 1)
    #[arg(long)]
    pub center: bool,
    /// Sample size for covariance or model input (defaults: p + 1 for covariances, 1e6 for models)
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Model document whose (S*, L*) is used for recovery metrics
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

impl InputArgs {
    fn read_opts(&self) -> ReadOptions {
        ReadOptions { header: self.header, center: self.center, n_samples: self.n_samples }
    }

    /// Covariance plus the truth from `--truth`, or from the input itself when it is a model.
    fn load(&self) -> CliResult<(lvgm::SampleCovariance, Option<PrecisionDecomposition>)> {
        let input = io::read_input(&self.input, self.format, &self.read_opts())?;
        let sigma = input.covariance(&self.read_opts())?;
        let truth = match &self.truth {
            Some(path) => Some(io::read_model(path)?.truth()),
            None => input.model().map(|m| m.truth()),
        };
        if let (Some(t), Input::Covariance(_)) = (&truth, &input) {
            if t.p() != sigma.p() {
                return Err(CliError::Usage(format!("truth has p = {} but the input has p = {}", t.p(), sigma.p())));
            }
        }
        Ok((sigma, truth))
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// One of mle, em, threshold, dantzig, composite
    #[arg(long, default_value = "mle")]
    pub estimator: String,
    /// Rank cap for the em estimator
    #[arg(long)]
    pub rank: Option<usize>,
    /// Entrywise threshold for the threshold estimator (default sqrt(ln p / n))
    #[arg(long)]
    pub t_sparse: Option<f64>,
    /// Eigenvalue threshold for the threshold estimator (default sqrt(p / n))
    #[arg(long)]
    pub t_spectral: Option<f64>,
    /// Primal and dual residual tolerance (default 1e-7)
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap (default 2000)
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Seed of the random em starting point
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative eigenvalue cutoff for the rank of L
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Absolute cutoff for the support of S (default 1e-6 max|S*| with a truth, else 1e-8)
    #[arg(long)]
    pub zero_tol: Option<f64>,
    /// Write wall_time_ms as null so output is byte-reproducible
    #[arg(long)]
    pub no_timing: bool,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        let mut opts = SolverOptions::default();
        if let Some(t) = self.tol {
            opts = opts.with_tol(t);
        }
        if let Some(m) = self.max_iter {
            opts = opts.with_max_iter(m);
        }
        opts
    }

    fn settings(&self) -> FitSettings {
        FitSettings {
            estimator: self.estimator.clone(),
            rank: self.rank,
            t_sparse: self.t_sparse,
            t_spectral: self.t_spectral,
            opts: self.options(),
            seed: self.seed,
            rank_tol: self.rank_tol,
            zero_tol: self.zero_tol,
            timing: !self.no_timing,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Overall penalty weight; needed with --gamma by all estimators except threshold
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Sparse-versus-low-rank trade-off; the l1 weight is lambda * gamma
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Report path; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// `lo:hi:count` (log-spaced) or a comma-separated list
    #[arg(long)]
    pub lambda: String,
    /// `lo:hi:count` (log-spaced) or a strictly increasing comma-separated list
    #[arg(long)]
    pub gamma: String,
    /// Worker threads; output does not depend on it
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// JSON sweep report; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Aggregate per-cell CSV table
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Observed variables
    #[arg(long)]
    pub p: usize,
    /// Latent variables
    #[arg(long)]
    pub h: usize,
    /// Degree bound of the observed conditional graph
    #[arg(long, default_value_t = 4)]
    pub max_degree: usize,
    /// Fraction of observed variables each latent touches
    #[arg(long, default_value_t = 1.0)]
    pub fanout: f64,
    /// Magnitude of observed-observed edge weights (signs random)
    #[arg(long, default_value_t = 1.0)]
    pub edge_strength: f64,
    /// Scale of latent-observed weights, divided by sqrt(p)
    #[arg(long, default_value_t = 1.0)]
    pub latent_strength: f64,
    /// Model seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples to draw (none when 0)
    #[arg(long, default_value_t = 0)]
    pub n: usize,
    /// Seed of the sample draw; defaults to seed + 1000
    #[arg(long)]
    pub sample_seed: Option<u64>,
    /// Model document path; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// CSV path for the samples
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// MatrixMarket path for the population covariance of the observed block
    #[arg(long)]
    pub covariance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// MatrixMarket file holding the symmetric matrix
    #[arg(long)]
    pub input: PathBuf,
    /// Weight of the l1 part relative to the trace part
    #[arg(long)]
    pub gamma: f64,
    /// Solver tolerance (default 1e-10)
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap (default 20000)
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative eigenvalue cutoff for the rank of L
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Report path; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Fit report whose (S, L) is examined
    #[arg(long)]
    pub decomposition: PathBuf,
    /// Defaults to the lambda recorded in the report
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Defaults to the gamma recorded in the report
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Relative eigenvalue cutoff for the rank of L
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Report path; stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn status(converged: bool) -> i32 {
    if converged {
        0
    } else {
        2
    }
}

/// Runs a parsed command and returns the exit status for success paths.
pub fn execute(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Generate(a) => {
            let params = GeneratorParams {
                p: a.p,
                h: a.h,
                max_degree: a.max_degree,
                latent_fanout: a.fanout,
                edge_strength: a.edge_strength,
                latent_strength: a.latent_strength,
            };
            let sample_seed = a.sample_seed.unwrap_or(a.seed.wrapping_add(1000));
            let (model, samples) = run::run_generate(params, a.seed, a.n, sample_seed)?;
            if let (Some(path), Some(x)) = (&a.samples, &samples) {
                io::write_text(path, &io::format_csv_samples(x))?;
            } else if a.samples.is_some() {
                return Err(CliError::Usage("--samples needs --n > 0".into()));
            }
            if let Some(path) = &a.covariance {
                io::write_text(path, &io::format_matrix_market(&model.cov_o))?;
            }
            emit(a.output.as_deref(), &model.to_json())?;
            Ok(0)
        }
        Command::Fit(a) => {
            let (sigma, truth) = a.input.load()?;
            let outcome = run::run_fit(&sigma, &a.solver.settings(), a.lambda, a.gamma, truth.as_ref())?;
            for note in &outcome.report.notes {
                log::warn!("{note}");
            }
            emit(a.output.as_deref(), &to_json(&outcome.document))?;
            Ok(status(outcome.document.converged))
        }
        Command::Sweep(a) => {
            let (sigma, truth) = a.input.load()?;
            let settings = SweepSettings {
                fit: a.solver.settings(),
                lambdas: parse_grid(&a.lambda)?,
                gammas: parse_grid(&a.gamma)?,
                jobs: a.jobs,
            };
            let outcome = run::run_sweep(&sigma, &settings, truth.as_ref())?;
            if let Some(path) = &a.csv {
                io::write_text(path, &outcome.csv)?;
            }
            emit(a.output.as_deref(), &to_json(&outcome.document))?;
            let all_ok = outcome.document.cells.iter().all(|c| c.fit.as_ref().is_some_and(|f| f.converged));
            Ok(status(all_ok))
        }
        Command::Decompose(a) => {
            let m = io::read_matrix_market(&a.input)?;
            let mut opts = SolverOptions::default().with_tol(a.tol.unwrap_or(1e-10)).with_max_iter(20_000);
            if let Some(k) = a.max_iter {
                opts = opts.with_max_iter(k);
            }
            let doc = run::run_decompose(&lvgm::linalg::symmetrize(&m), a.gamma, &opts, a.rank_tol)?;
            emit(a.output.as_deref(), &to_json(&doc))?;
            Ok(status(doc.converged))
        }
        Command::Diagnose(a) => {
            let (sigma, truth) = a.input.load()?;
            let text = std::fs::read_to_string(&a.decomposition).map_err(|e| CliError::io(&a.decomposition, e))?;
            let fit = FitDocument::from_json(&text)?;
            let decomp = fit.decomposition()?;
            let reg = match (a.lambda.or(fit.lambda), a.gamma.or(fit.gamma)) {
                (Some(l), Some(g)) => Some(RegularizationParams::new(l, g)?),
                _ => None,
            };
            let doc = run::run_diagnose(&sigma, &decomp, reg, truth.as_ref(), a.rank_tol)?;
            emit(a.output.as_deref(), &to_json(&doc))?;
            Ok(0)
        }
    }
}
