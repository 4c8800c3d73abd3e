use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Landmark discovery, baselines and evaluation on coin-like images.
#[derive(Debug, Parser)]
#[command(name = "coinmark", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic obverse/reverse dataset with planted glyphs.
    Forge(ForgeArgs),
    /// Train a classifier and write a checkpoint.
    Train(TrainArgs),
    /// K-fold cross-validation of the reverse, observe and hierarchy tasks.
    Eval(EvalArgs),
    /// Find the sparsest region mask that preserves a class decision.
    Discover(DiscoverArgs),
    /// Occlusion discrepancy map.
    Occlude(OccludeArgs),
    /// Box-filtered gradient saliency map.
    Saliency(SaliencyArgs),
    /// Sweep epsilon and compare masks against ground truth and occlusion.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    /// Output directory for images, masks and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub parents: usize,
    #[arg(long, default_value_t = 2)]
    pub leaves_per_parent: usize,
    #[arg(long, default_value_t = 200)]
    pub images_per_leaf: usize,
    #[arg(long, default_value_t = 40)]
    pub size: usize,
    #[arg(long, default_value_t = 16.0)]
    pub disc_radius: f64,
    #[arg(long, default_value_t = 2)]
    pub jitter: i32,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub distractors: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Side {
    /// Reverse images, leaf labels.
    Reverse,
    /// Obverse images, parent labels.
    Obverse,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Multiplier applied every `--decay-every` epochs.
    #[arg(long, default_value_t = 0.5)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 10)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 32)]
    pub crop: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Side::Reverse)]
    pub side: Side,
    /// Hold out one class-balanced fold of this many for validation (0 = none).
    #[arg(long, default_value_t = 5)]
    pub holdout_folds: usize,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// JSON training report (config and per-epoch history).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Comma-separated subset of reverse, observe, hierarchy.
    #[arg(long, value_delimiter = ',', default_value = "reverse,observe,hierarchy")]
    pub tasks: Vec<String>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RegionOpts {
    /// Sliding-window size; ignored with --pixel-regions.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 3)]
    pub stride: usize,
    /// One region per pixel instead of sliding windows.
    #[arg(long)]
    pub pixel_regions: bool,
}

#[derive(Debug, Args)]
pub struct DiscoveryOpts {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 50)]
    pub backprojection_budget: usize,
}

#[derive(Debug, Args)]
pub struct ImageInput {
    /// A single P5 image.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub image: Option<PathBuf>,
    /// Use the reverse images of a dataset manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Process at most this many manifest samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Target class label; defaults to the ground truth (manifest) or the prediction (image).
    #[arg(long)]
    pub class: Option<String>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: ImageInput,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[command(flatten)]
    pub regions: RegionOpts,
    #[command(flatten)]
    pub discovery: DiscoveryOpts,
    /// Directory for heatmaps and reports.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OccludeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: ImageInput,
    #[arg(long, default_value_t = 11)]
    pub patch: usize,
    #[arg(long, default_value_t = 3)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: ImageInput,
    #[arg(long, default_value_t = 11)]
    pub patch: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,1.0")]
    pub epsilons: Vec<f64>,
    #[command(flatten)]
    pub regions: RegionOpts,
    #[command(flatten)]
    pub discovery: DiscoveryOpts,
    /// Occlusion reference patch size.
    #[arg(long, default_value_t = 11)]
    pub occlusion_patch: usize,
    #[arg(long, default_value_t = 3)]
    pub occlusion_stride: usize,
    /// JSON report with every run.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
