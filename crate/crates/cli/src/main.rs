//! `spo2dcac`: synthetic data, map extraction, training, evaluation and baselines.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "spo2dcac", version, about = "SpO2 estimation from facial RGB traces")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic subjects (STM map + SpO2 CSV each).
    Synth(SynthArgs),
    /// Build a spatio-temporal map from a raw frame dump.
    Extract(ExtractArgs),
    /// Train one variant on one cross-validation fold.
    Train(TrainArgs),
    /// Score a checkpoint on the test subjects of a fold.
    Eval(EvalArgs),
    /// Fit and score the ratio-of-ratios or linear-regression baseline.
    Baseline(BaselineArgs),
    /// Train the end-to-end variant for every (alpha, seed) pair.
    SweepAlpha(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    subjects: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON file of generator parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    frames: PathBuf,
    /// Face rectangle as `x,y,w,h` in pixels.
    #[arg(long)]
    rect: String,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the output file stem.
    #[arg(long)]
    subject_id: Option<String>,
    #[arg(long)]
    force: bool,
}

/// Options shared by the commands that work on a fold of a dataset.
#[derive(Debug, Args)]
struct FoldArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Run configuration JSON; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of folds.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    fold: FoldArgs,
    #[arg(long)]
    variant: Option<String>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Seeds both initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    fold: FoldArgs,
    /// Checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-second predictions (subject_id, t_s, pred_pct, gt_pct).
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    fold: FoldArgs,
    #[arg(long, value_parser = ["ror", "lr"])]
    method: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    fold: FoldArgs,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output CSV (alpha, seed, corrcoef, mae, rmse).
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::SweepAlpha(a) => commands::sweep_alpha(a),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return fail(CliError::Usage(e.to_string().trim().to_string())),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
