use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spe_core::{CorrelationKind, Criterion, OptimOptions};

use crate::error::{usage, CliResult};

#[derive(Debug, Parser)]
#[command(name = "spe", version, about = "Spatial predictor envelope regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the envelope model at a given dimension.
    Fit(FitArgs),
    /// Fit every dimension and tabulate the selection criteria.
    Select(SelectArgs),
    /// Regression-kriging predictions at new sites from a saved fit.
    Predict(PredictArgs),
    /// Repeated k-fold cross-validation of envelope and full models.
    Cv(CvArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
    /// Compositional preprocessing: thresholds, closure, log-ratios, response transform.
    Transform(TransformArgs),
    /// Write the synthetic geochemical survey table.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// The two coordinate columns.
    #[arg(long, default_value = "sx,sy")]
    pub coords: String,
    /// Response column(s), comma separated.
    #[arg(long)]
    pub response: String,
    /// Predictor columns; defaults to every remaining column.
    #[arg(long)]
    pub predictors: Option<String>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 5000)]
    pub max_evals: usize,
    #[arg(long, default_value_t = 2000)]
    pub theta_max_evals: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Random orthonormal starts in addition to the deterministic ones.
    #[arg(long, default_value_t = 1)]
    pub random_starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Treat observations as independent (ρ = I) instead of spatially correlated.
    #[arg(long)]
    pub independent: bool,
}

impl OptimArgs {
    pub fn options(&self) -> CliResult<OptimOptions> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(usage(format!("--tol must be positive, got {}", self.tol)));
        }
        if self.max_evals == 0 || self.theta_max_evals == 0 {
            return Err(usage("evaluation budgets must be positive"));
        }
        Ok(OptimOptions {
            max_evals: self.max_evals,
            theta_max_evals: self.theta_max_evals,
            tol: self.tol,
            random_starts: self.random_starts,
            seed: self.seed,
        })
    }

    pub fn kind(&self) -> CorrelationKind {
        if self.independent {
            CorrelationKind::Independent
        } else {
            CorrelationKind::Spatial
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Aic,
    Bic,
    Cv,
}

impl CriterionArg {
    pub fn criterion(self, k: usize, reps: usize, seed: u64) -> Criterion {
        match self {
            CriterionArg::Aic => Criterion::Aic,
            CriterionArg::Bic => Criterion::Bic,
            CriterionArg::Cv => Criterion::Cv { k, reps, seed },
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Envelope dimension, 0 ≤ u ≤ p.
    #[arg(long)]
    pub u: usize,
    /// Fit artifact (JSON).
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// Coefficient table (CSV); standard output when neither output is given.
    #[arg(long)]
    pub out_coef: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, value_enum, default_value_t = CriterionArg::Bic)]
    pub criterion: CriterionArg,
    /// Folds, when the criterion is cv.
    #[arg(long, default_value_t = 10)]
    pub cv_k: usize,
    /// Repetitions, when the criterion is cv.
    #[arg(long, default_value_t = 1)]
    pub cv_reps: usize,
    /// Per-dimension table (CSV); standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full selection record (JSON).
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Training CSV the fit was made on.
    #[arg(long)]
    pub data: PathBuf,
    /// Fit artifact written by `spe fit --out-json`.
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV of new sites with the coordinate and predictor columns.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Envelope model with this fixed dimension (repeatable).
    #[arg(long)]
    pub cv_fix_u: Vec<usize>,
    /// Envelope model re-selecting u on every training fold (repeatable).
    #[arg(long, value_enum)]
    pub cv_select_u: Vec<CriterionArg>,
    /// Leave the full spatial regression out of the comparison.
    #[arg(long)]
    pub no_gls: bool,
    /// Per-fold table (CSV); standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full report (JSON).
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario 1 to 5.
    #[arg(long)]
    pub scenario: u8,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the independence-assuming envelope baseline.
    #[arg(long)]
    pub no_pe: bool,
    /// Histogram bins for the coefficient distribution.
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    /// Directory receiving summary.csv, replicates.csv, histogram.csv, overlay.csv and result.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Raw CSV with coordinates, component concentrations and the response in ppm.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "sx,sy")]
    pub coords: String,
    /// Response column, in parts per million.
    #[arg(long)]
    pub response: String,
    /// Component columns; defaults to every remaining column.
    #[arg(long)]
    pub components: Option<String>,
    /// Subcomposition to close and transform; defaults to all components.
    #[arg(long)]
    pub subcomposition: Option<String>,
    /// Detection threshold as NAME=VALUE (repeatable).
    #[arg(long = "threshold", value_name = "NAME=VALUE")]
    pub thresholds: Vec<String>,
    /// Log-ratio denominator component.
    #[arg(long)]
    pub denominator: String,
    /// Model-ready CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary of the preprocessing (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 53)]
    pub n: usize,
    #[arg(long, default_value_t = 14)]
    pub locations: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
