//! Batch front door for the crowdsparse library: simulate datasets, fit
//! classifiers from expert votes, pick the sparsity level, compare methods,
//! and score new units. Every command writes its results as CSV next to a
//! TOML manifest recording parameters and seeds; reruns with the same inputs
//! produce byte-identical result files at any thread count.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crowdsparse::{Error, Result};

#[derive(Parser)]
#[command(name = "crowdsparse", version, about = "Sparse classifiers from noisy expert votes")]
struct Cli {
    /// Worker threads for parallel sections; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scenario config.
    Simulate(SimulateArgs),
    /// Fit one model at a fixed penalty.
    Fit(FitArgs),
    /// Scan a penalty grid and keep the vote-disagreement minimizer.
    Select(SelectArgs),
    /// Score several methods on one train/test split.
    Compare(CompareArgs),
    /// Score new units with a saved model.
    Predict(PredictArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    /// Latent-label model fit by penalized EM.
    Em,
    /// Logistic regression on majority-vote labels.
    Majority,
    /// Logistic regression on the true labels (requires --labels).
    Oracle,
}

#[derive(Args)]
pub struct FitArgs {
    /// Feature matrix CSV (one row per unit, no header).
    #[arg(long)]
    features: PathBuf,
    /// Vote matrix CSV (one column per expert; blank cells = no vote).
    #[arg(long)]
    votes: PathBuf,
    /// True labels CSV; required by --method oracle.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// L1 penalty weight shared by the classifier and reliability slopes.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = FitMethod::Em)]
    method: FitMethod,
    /// Random restarts of the EM fit; the best penalized likelihood wins.
    #[arg(long, default_value_t = 30)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Center and scale features first; the transform is stored in the model
    /// and reapplied by `predict`.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SelectArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    votes: PathBuf,
    /// True labels CSV; fills the report's r_hat column for reference.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated non-increasing penalty grid. Defaults to a log-spaced
    /// grid anchored at the smallest penalty that zeroes every slope.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid: Option<Vec<f64>>,
    /// Size of the default grid when --grid is not given.
    #[arg(long, default_value_t = 30)]
    grid_size: usize,
    /// Held-out fraction used for scoring.
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    /// Score by K-fold cross-validation on all units instead of one split.
    #[arg(long, value_name = "K")]
    cv: Option<usize>,
    #[arg(long, default_value_t = 30)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    votes: PathBuf,
    /// True labels CSV; fills r_hat and enables the oracle method.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated methods: em, em-sparse, majority, oracle,
    /// constant-0, constant-1.
    #[arg(long, value_delimiter = ',', default_value = "em,em-sparse,majority")]
    method: Vec<String>,
    /// Penalty grid for the methods that tune one (see `select`).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 30)]
    grid_size: usize,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value_t = 30)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Model file written by `fit` or `select`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Optional votes for the new units; blank cells mean the expert did not
    /// look at that unit, and an all-blank file matches omitting the flag.
    #[arg(long)]
    votes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            // 2 = the inputs were rejected, 3 = the computation broke down.
            ExitCode::from(if err.is_numeric() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    configure_jobs(cli.jobs)?;
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Select(args) => commands::select(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::Predict(args) => commands::predict(&args),
    }
}

fn configure_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Invalid(format!("cannot use {jobs} worker threads: {e}")))
}
