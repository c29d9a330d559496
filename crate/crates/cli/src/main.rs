use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod docs;

/// Seed used whenever `--seed` is not given.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] tscp::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for solver and numeric failures, 2 for bad input and I/O.
    pub fn exit_code(&self) -> u8 {
        fn core(e: &tscp::Error) -> u8 {
            use tscp::Error::*;
            match e {
                IterationLimit { .. } | NodeLimit { .. } | Infeasible(_) | Degenerate(_) => 1,
                Trial { source, .. } => core(source),
                _ => 2,
            }
        }
        match self {
            CliError::Core(e) => core(e),
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tscp", version, about = "Conformal prediction regions for multi-step forecasts")]
struct Cli {
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "TSCP_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample random-walk trajectories with predictions and write them as CSV.
    Generate(GenerateArgs),
    /// Fit the time-step weights on the first calibration split.
    Fit(FitArgs),
    /// Compute the conformal constant and radii on the second calibration split.
    Calibrate(CalibrateArgs),
    /// Check validation trajectories against calibrated regions.
    Evaluate(EvaluateArgs),
    /// Per-step region sizes of the fitted regions and the union-bound baseline.
    Compare(CompareArgs),
    /// Per-step error quantiles at levels 1-δ and 1-δ/T.
    Tails(TailsArgs),
    /// Repeat generate/fit/calibrate/evaluate over independent trials.
    Trials(TrialsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Gauss,
    StudentT,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Predictor {
    Zoh,
    Linear,
}

impl From<Predictor> for tscp::datagen::PredictorSpec {
    fn from(p: Predictor) -> Self {
        match p {
            Predictor::Zoh => Self::ZeroOrderHold,
            Predictor::Linear => Self::LinearExtrapolation,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Solver {
    Lcp,
    Milcp,
    Grid,
}

impl From<Solver> for tscp::SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Lcp => Self::Lcp,
            Solver::Milcp => Self::Milcp,
            Solver::Grid => Self::Grid,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    #[arg(long, value_enum, default_value = "gauss")]
    pub kind: Kind,
    /// Standard deviation of each increment coordinate.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Degrees of freedom for `--kind student-t`.
    #[arg(long, default_value_t = 3.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub dims: u64,
    /// Number of observed steps before t = 0.
    #[arg(long, default_value_t = 20)]
    pub t_obs: usize,
    /// Prediction horizon T.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: u64,
    #[arg(long, value_enum, default_value = "zoh")]
    pub predictor: Predictor,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Number of trajectories.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// CSV path [default: <out-dir>/dataset.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metadata path [default: CSV path with extension `meta.json`].
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "lcp")]
    pub solver: Solver,
    /// Miscoverage level δ.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Use only the first T steps of every trajectory.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Trajectories used for calibration (both splits) [default: half the dataset].
    #[arg(long)]
    pub n_cal: Option<usize>,
    /// Trajectories of the first calibration split, used to fit the weights.
    #[arg(long, default_value_t = 50)]
    pub n_cal1: usize,
    /// Seed of the random split.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Predictor applied when the CSV carries no predictions.
    #[arg(long, value_enum, default_value = "zoh")]
    pub predictor: Predictor,
    /// Big-M as a multiple (>= 1) of the largest error.
    #[arg(long, default_value_t = 1.0)]
    pub big_m_scale: f64,
    #[arg(long, default_value_t = tscp::bb::DEFAULT_NODE_LIMIT)]
    pub node_limit: usize,
    /// Output path [default: <out-dir>/alphas.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Weights written by `fit`; its split is reused.
    #[arg(long)]
    pub alphas: PathBuf,
    /// Miscoverage level [default: the one used by `fit`].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Output path [default: <out-dir>/regions.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Regions written by `calibrate`; its split is reused.
    #[arg(long)]
    pub regions: PathBuf,
    /// Per-trajectory CSV [default: <out-dir>/containment.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Coverage summary [default: <out-dir>/evaluation.json].
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Dataset the regions were calibrated on (for the dimension).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub regions: PathBuf,
    /// Size table [default: <out-dir>/compare.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TailsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Predictor applied when the CSV carries no predictions.
    #[arg(long, value_enum, default_value = "zoh")]
    pub predictor: Predictor,
    /// Quantile table [default: <out-dir>/tails.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrialsArgs {
    /// Study description written by an earlier run (`run_config.json`);
    /// replaces all study flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, default_value_t = 1200)]
    pub n_total: usize,
    #[arg(long, default_value_t = 600)]
    pub n_cal: usize,
    #[arg(long, default_value_t = 50)]
    pub n_cal1: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, value_enum, default_value = "lcp")]
    pub solver: Solver,
    #[arg(long, default_value_t = 1.0)]
    pub big_m_scale: f64,
    #[arg(long, default_value_t = tscp::bb::DEFAULT_NODE_LIMIT)]
    pub node_limit: usize,
    /// Also solve the other exact program and report objective gaps.
    #[arg(long)]
    pub check_milcp: bool,
    /// Number of trials.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    /// Master seed; trial seeds are derived from it by index.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads [default: all cores].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if !matches!(cli.command, Command::Trials(_)) {
        // only `trials` runs in parallel; failure just means a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(&cli.out_dir, a),
        Command::Fit(a) => commands::fit(&cli.out_dir, a),
        Command::Calibrate(a) => commands::calibrate(&cli.out_dir, a),
        Command::Evaluate(a) => commands::evaluate(&cli.out_dir, a),
        Command::Compare(a) => commands::compare(&cli.out_dir, a),
        Command::Tails(a) => commands::tails(&cli.out_dir, a),
        Command::Trials(a) => commands::trials(&cli.out_dir, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
