//! Command-line entry point for the RGBT video object detector: dataset
//! generation, training, inference, evaluation, FPS benchmarking, gradient
//! checking, dataset statistics, and feature-map dumps.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "einet", version, about = "RGB-thermal video object detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGBT dataset in the VOC-style layout
    Gen(GenArgs),
    /// Train a detector variant
    Train(TrainArgs),
    /// Run inference over a dataset split and write a detections file
    Infer(InferArgs),
    /// Score a detections file against ground truth (AP50 / AP)
    Eval(EvalArgs),
    /// Measure end-to-end inference FPS
    Bench(BenchArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Per-class object counts for the train/test splits
    Stats(StatsArgs),
    /// Dump noise-erasure feature panels for one frame
    DumpFeatures(DumpFeaturesArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory; all artifacts land here
    #[arg(long)]
    out: PathBuf,
    /// Optional key=value config file (flags override it)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker-thread cap for parallel sections
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Stem channel count
    #[arg(long)]
    stem: Option<usize>,
    /// Stage channels, e.g. 16,32,64
    #[arg(long)]
    stages: Option<String>,
    /// Residual blocks per stage, e.g. 1,2,2
    #[arg(long)]
    blocks: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// day | night | motion_blur | distant_small
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    train_videos: Option<usize>,
    #[arg(long)]
    frames_per_video: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    objects_min: Option<usize>,
    #[arg(long)]
    objects_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    /// train | test
    #[arg(long)]
    split: Option<String>,
    /// baseline_rgb | baseline_t | tpe_only | mi_cat | mi_erasure | full
    #[arg(long)]
    variant: Option<String>,
    /// Temporal window: group letter a..h or comma offsets like -1,+1
    #[arg(long)]
    window: Option<String>,
    /// Add the current frame's features on top of the temporal sum
    #[arg(long)]
    include_current_residual: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    final_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Disable the horizontal-flip augmentation
    #[arg(long)]
    no_flip: bool,
    #[arg(long)]
    flip_probability: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    include_current_residual: bool,
    /// Score threshold (0.25 demo default; use 0.01 when producing
    /// detections for evaluation)
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    input_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: Option<String>,
    /// Detections file in the line format written by `infer`
    #[arg(long)]
    dets: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    include_current_residual: bool,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Number of frames per timed run
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Central-difference step
    #[arg(long)]
    h: Option<f64>,
    /// Maximum acceptable relative error
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct DumpFeaturesArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: Option<String>,
    /// Frame id (defaults to the first frame of the split)
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input_size: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Train(args) => commands::train(args),
        Command::Infer(args) => commands::infer(args),
        Command::Eval(args) => commands::eval(args),
        Command::Bench(args) => commands::bench(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Stats(args) => commands::stats(args),
        Command::DumpFeatures(args) => commands::dump_features(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(1)
        }
    }
}
