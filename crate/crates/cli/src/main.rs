//! Patch descriptor pipeline CLI.
//!
//! Subcommands: `synth` (desk-scale dataset fixture), `stats`
//! (normalization statistics), `train`, `eval`, `describe`, `match`.
//! Exit codes: 0 success, 2 input/config error, 3 artifact integrity
//! error, 4 numeric abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchdesc::Error;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "patchdesc", version, about = "Learned local patch descriptors under Euclidean distance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic patch dataset in the mosaic layout.
    Synth(SynthArgs),
    /// Compute dataset mean/std over the training pairs' patches.
    Stats(StatsArgs),
    /// Train a descriptor model.
    Train(TrainArgs),
    /// Evaluate a model on a pair list (ROC, FPR@95, PR, histograms).
    Eval(EvalArgs),
    /// Extract descriptors for the patches in a bitmap.
    Describe(DescribeArgs),
    /// Nearest-neighbor matching between two descriptor files.
    Match(MatchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value_t = 4)]
    pub per_point: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Contrast jitter strength between pair members (0 = off).
    #[arg(long, default_value_t = 0.0)]
    pub contrast_jitter: f64,
    /// Geometric misalignment strength in positive pairs (0 = off).
    #[arg(long, default_value_t = 0.0)]
    pub misalign: f64,
    /// Additive noise amplitude in gray levels.
    #[arg(long, default_value_t = 4.0)]
    pub noise: f64,
    /// Cap on train pairs (0 = all).
    #[arg(long, default_value_t = 0)]
    pub train_pairs: usize,
    /// Cap on test pairs (0 = all).
    #[arg(long, default_value_t = 0)]
    pub test_pairs: usize,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Dataset directory (mosaics + info.txt).
    #[arg(long)]
    pub data: PathBuf,
    /// Training pair list file.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Equalize histograms before measuring statistics.
    #[arg(long)]
    pub hist_eq: bool,
    /// Output stats file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional key = value config file (flags win).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Stats file from `patchdesc stats`.
    #[arg(long)]
    pub stats: PathBuf,
    /// cnn7, cnn7stn, or a full architecture string.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub hist_eq: bool,
    /// Expand training pairs with the 12 rotation/flip variants.
    #[arg(long)]
    pub augment: bool,
    /// `auto` (margin heuristic) or a fixed positive number.
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epoch shuffle seed.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Write a checkpoint every N epochs (0 = never).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Resume from a checkpoint file.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory (model, checkpoints, loss trace).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output directory for the CSV bundle.
    #[arg(long)]
    pub out: PathBuf,
    /// Emit the N top-ranked false positives/negatives.
    #[arg(long, default_value_t = 0)]
    pub top_errors: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Grayscale BMP whose sides are multiples of 64, tiled row-major.
    #[arg(long)]
    pub patches: PathBuf,
    /// Number of tiles to describe (0 = all).
    #[arg(long, default_value_t = 0)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// csv or bin.
    #[arg(long, default_value = "csv")]
    pub format: String,
}

#[derive(Args)]
pub struct MatchArgs {
    /// Query descriptors (csv or bin).
    #[arg(long)]
    pub a: PathBuf,
    /// Reference descriptors (csv or bin).
    #[arg(long)]
    pub b: PathBuf,
    /// Distance threshold for declaring a match.
    #[arg(long)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run() -> patchdesc::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(a) => commands::cmd_synth(&a),
        Command::Stats(a) => {
            let file = FileConfig::load(a.config.as_deref())?;
            let hist_eq = file.resolve_flag(a.hist_eq, "hist_eq")?;
            commands::cmd_stats(&a, hist_eq)
        }
        Command::Train(a) => {
            let file = FileConfig::load(a.config.as_deref())?;
            let resolved = commands::TrainResolved {
                arch: file.resolve(a.arch.clone(), "arch", "cnn7".to_string())?,
                hist_eq: file.resolve_flag(a.hist_eq, "hist_eq")?,
                augment: file.resolve_flag(a.augment, "augment")?,
                margin: file.resolve(a.margin.clone(), "margin", "auto".to_string())?,
                epochs: file.resolve(a.epochs, "epochs", 40)?,
                batch_size: file.resolve(a.batch_size, "batch_size", 100)?,
                seed: file.resolve(a.seed, "seed", 1)?,
                shuffle_seed: file.resolve(a.shuffle_seed, "shuffle_seed", 1)?,
                lr: file.resolve(a.lr, "lr", 0.01)?,
                weight_decay: file.resolve(a.weight_decay, "weight_decay", 0.001)?,
                checkpoint_every: file.resolve(a.checkpoint_every, "checkpoint_every", 0)?,
            };
            commands::cmd_train(&a, &resolved)
        }
        Command::Eval(a) => commands::cmd_eval(&a),
        Command::Describe(a) => commands::cmd_describe(&a),
        Command::Match(a) => commands::cmd_match(&a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Format(_) => 3,
                Error::Numeric(_) => 4,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
