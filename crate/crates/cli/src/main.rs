//! `gammaspot`: simulate count maps, train detectors, evaluate predictions.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "gammaspot",
    version,
    about = "Point-source detection on simulated gamma-ray count maps",
    after_help = "Outputs default to $GAMMASPOT_OUT/<command> (or ./runs/<command>) when --out is not given."
)]
struct Cli {
    /// JSON file merged under the flags (flags win); a run.json also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image stages. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset of count maps with known sources.
    Generate(GenerateArgs),
    /// Train a detector on a dataset.
    Train(TrainArgs),
    /// Write predicted source lists for images.
    Predict(PredictArgs),
    /// Score a checkpoint or a directory of external predictions.
    Evaluate(EvaluateArgs),
    /// Train and score the twelve-row UNet grid.
    SweepUnet(SweepArgs),
    /// Pick the threshold k on the validation split.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Default,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Unet,
    Focnn,
    Focnn0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Bce,
    Mse,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchArg {
    Greedy,
    Max,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Number of images.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub deg_per_pixel: Option<f64>,
    #[arg(long)]
    pub psf_sigma: Option<f64>,
    #[arg(long)]
    pub n_sources: Option<usize>,
    #[arg(long)]
    pub jitter: Option<usize>,
    #[arg(long)]
    pub flux_min: Option<f64>,
    #[arg(long)]
    pub flux_max: Option<f64>,
    #[arg(long)]
    pub background: Option<f64>,
    #[arg(long)]
    pub background_spread: Option<f64>,
    /// Train,val,test fractions.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// `.grid` intensity template replacing the procedural background.
    #[arg(long)]
    pub background_template: Option<PathBuf>,
}

/// Optimisation settings shared by `train` and `sweep-unet`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub source_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Fixed source-pixel weight; per-batch imbalance ratio when unset.
    #[arg(long)]
    pub source_weight: Option<f64>,
    /// Seed for crop sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for parameter initialisation.
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub val_crops: Option<usize>,
    /// Candidate k values for threshold calibration.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<f64>>,
    /// Sliding-window stride; half the crop side when unset.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// SimpleCNN with the tabulated paddings and a centre crop.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub literal_padding: Option<bool>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Skip threshold calibration after training.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_calibrate: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InferArgs {
    /// Threshold k; the checkpoint's calibrated value, else 25, when unset.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory; predicts every image of `--split`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Single `.grid` count map instead of a dataset.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Also write the averaged probability maps as f32 `.grid` files.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub save_maps: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub infer: InferArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `src_<id>.json` files from any tool.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, value_enum)]
    pub matching: Option<MatchArg>,
    /// Write PNG overlays of predictions against truth.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub png: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub infer: InferArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, value_enum)]
    pub matching: Option<MatchArg>,
    /// Where the calibrated checkpoint goes; updated in place when unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub filters: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub kernels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

/// Bad or missing flags; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon_threads(n) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = cli.config.as_deref();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a, cfg),
        Command::Train(a) => commands::train(a, cfg),
        Command::Predict(a) => commands::predict(a, cfg),
        Command::Evaluate(a) => commands::evaluate(a, cfg),
        Command::SweepUnet(a) => commands::sweep_unet(a, cfg),
        Command::Calibrate(a) => commands::calibrate(a, cfg),
    };
    match result {
        Ok(run) => {
            println!("{}", run.display());
            ExitCode::SUCCESS
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn rayon_threads(n: usize) -> anyhow::Result<()> {
    if n == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}
