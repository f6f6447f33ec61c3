//! `curstat`: estimation, optimality checking and simulation for current
//! status data with competing risks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    NonConvergence(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NonConvergence(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Naive,
    #[value(name = "scaled-naive")]
    ScaledNaive,
    #[value(name = "truncated-naive")]
    TruncatedNaive,
    Mle,
}

/// Generating model, given either as a JSON file or by flags; flags win.
/// With neither, the two-risk exponential benchmark model is used.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// JSON file with `obs_rate`, `cause_probs`, `cond_rates`.
    #[arg(long)]
    pub model_json: Option<PathBuf>,
    /// Exponential rate of the observation time.
    #[arg(long)]
    pub obs_rate: Option<f64>,
    /// Cause probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cause_probs: Option<Vec<f64>>,
    /// Conditional failure rates per cause, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cond_rates: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of observations.
    #[arg(long)]
    pub n: usize,
    /// Root seed.
    #[arg(long)]
    pub seed: u64,
    /// Output dataset CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Input dataset CSV (`t,cause`).
    #[arg(long)]
    pub data: PathBuf,
    /// Number of failure causes; inferred from the data when omitted.
    #[arg(long)]
    pub causes: Option<usize>,
    #[arg(long, value_enum)]
    pub estimator: EstimatorArg,
    /// Scaling horizon for the scaled naive estimator.
    #[arg(long, default_value_t = 3.0)]
    pub s0: f64,
    /// Certificate tolerance for the maximum likelihood estimator.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Output estimate CSV (`k,t,value`).
    #[arg(long)]
    pub out: PathBuf,
    /// Certificate JSON path; defaults to `<out>.cert.json`.
    #[arg(long)]
    pub cert: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Estimate CSV to check.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Contract to check the estimate against.
    #[arg(long, value_enum, default_value_t = EstimatorArg::Mle)]
    pub estimator: EstimatorArg,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Horizon of the sum constraint for the scaled naive estimator.
    #[arg(long, default_value_t = 3.0)]
    pub s0: f64,
}

#[derive(Debug, Args)]
pub struct SimulateMseArgs {
    /// Experiment configuration JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Estimators to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub grid_start: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub grid_end: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub mle_tol: Option<f64>,
    #[arg(long)]
    pub mle_max_iter: Option<usize>,
    /// Replication parallelism; results are identical at any thread count.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SimulateLimitArgs {
    /// Local parameters JSON (`t0`, `subdist`, `density`, `obs_density`);
    /// alternatively give a model and `--t0`.
    #[arg(long)]
    pub params_json: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Centering time when deriving parameters from a model.
    #[arg(long, default_value_t = 1.0)]
    pub t0: f64,
    /// Number of replications.
    #[arg(long)]
    pub reps: usize,
    /// Root seed; replication seeds derive from it.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.005)]
    pub step: f64,
    /// Analysis window half-width.
    #[arg(long, default_value_t = 4.0)]
    pub analysis_half: f64,
    /// Sampling window half-width as a multiple of the analysis half-width.
    #[arg(long, default_value_t = 2.0)]
    pub sample_factor: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub touch_tol: f64,
    /// Replace the Brownian paths by zero noise (drift only).
    #[arg(long)]
    pub zero_noise: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Parser)]
#[command(
    name = "curstat",
    version,
    about = "Estimators and limit-process simulation for current status data with competing risks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from the generating model.
    GenData(GenDataArgs),
    /// Fit an estimator and write the estimate CSV plus certificate JSON.
    Estimate(EstimateArgs),
    /// Recompute the optimality/validity certificate of an estimate.
    Check(CheckArgs),
    /// Monte-Carlo mean-squared-error comparison of the estimators.
    SimulateMse(SimulateMseArgs),
    /// Simulate the limit processes and their diagnostics.
    SimulateLimit(SimulateLimitArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, anything else is a
            // usage error.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenData(args) => commands::cmd_gen_data(args),
        Command::Estimate(args) => commands::cmd_estimate(args),
        Command::Check(args) => commands::cmd_check(args),
        Command::SimulateMse(args) => commands::cmd_simulate_mse(args),
        Command::SimulateLimit(args) => commands::cmd_simulate_limit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
