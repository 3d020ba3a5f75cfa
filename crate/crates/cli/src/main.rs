//! `hebbnet` command-line driver.
//!
//! Exit codes: 0 success, 2 bad flags or arguments, 3 data or checkpoint
//! errors, 4 divergence.

mod commands;
mod inspect;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hebbnet::data::SplitLimits;

#[derive(Parser, Debug)]
#[command(
    name = "hebbnet",
    version,
    about = "Hebbian feature learning: train, probe, retrain, inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train all Hebbian layers and the terminal probe.
    Train(TrainArgs),
    /// Train linear probes on frozen features of a checkpoint.
    Probe(ProbeArgs),
    /// Re-initialize and retrain the upper layers of a checkpoint.
    Retrain(RetrainArgs),
    /// Write the filters of a convolutional layer as PGM/PPM images.
    Inspect(InspectArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Mnist,
    /// Gaussian samples with a known covariance, 1x3x3.
    Synthetic,
    /// Oriented gratings with noise, 3x32x32.
    SyntheticImages,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Directory holding the dataset files (cifar10, mnist).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Per-split caps as TRAIN[,VAL[,TEST]].
    #[arg(long, value_parser = parse_limit)]
    pub limit: Option<SplitLimits>,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Probe learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub eta_probe: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub probe_l2: f64,
    /// Epochs for probes on frozen features.
    #[arg(long, default_value_t = 20)]
    pub probe_epochs: usize,
    /// Run without data parallelism.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug, Clone)]
pub struct HebbArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Hebbian learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    #[arg(long)]
    pub no_early_stopping: bool,
    /// Train layers one at a time, bottom up.
    #[arg(long)]
    pub greedy: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Spec file, or `reference` / `reference-dense`.
    #[arg(long, default_value = "reference")]
    pub spec: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hebb: HebbArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Feature tap (0 = input, k = after Hebbian layer k) or `all`.
    #[arg(long, default_value = "all")]
    pub layer: String,
    #[command(flatten)]
    pub data: DataArgs,
    /// Seed for probe initialization and shuffling (default: network seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RetrainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// First Hebbian layer (0-based) to re-initialize and train.
    #[arg(long)]
    pub from_layer: usize,
    #[command(flatten)]
    pub data: DataArgs,
    /// Replaces the spec seed used for re-initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub hebb: HebbArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Hebbian layer, 1-based.
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_limit(s: &str) -> Result<SplitLimits, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| format!("`{p}` is not a count"))
        })
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [t] => Ok(SplitLimits {
            train: t,
            val: usize::MAX,
            test: usize::MAX,
        }),
        [t, v] => Ok(SplitLimits {
            train: t,
            val: v,
            test: usize::MAX,
        }),
        [t, v, e] => Ok(SplitLimits {
            train: t,
            val: v,
            test: e,
        }),
        _ => Err("expected TRAIN[,VAL[,TEST]]".into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Probe(a) => commands::probe(a),
        Command::Retrain(a) => commands::retrain(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
