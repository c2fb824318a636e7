use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "iqa-forge", version, about = "Build, fuse and evaluate image quality datasets")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "IQA_FORGE_WORKERS")]
    workers: Option<usize>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate per-reference distortion parameters against the level table.
    Calibrate(CalibrateArgs),
    /// Generate the stage-1 and stage-2 corpus from calibrated parameters.
    Build(BuildArgs),
    /// Score every distorted image of a manifest with full-reference metrics.
    Score(ScoreArgs),
    /// Fuse metric scores into synthetic quality scores.
    Sqb(SqbArgs),
    /// Weighted SRCC of the fused scores across a range of k.
    Ksweep(KsweepArgs),
    /// Correlation statistics and significance tests for predictors.
    Eval(EvalArgs),
    /// Histogram and boxplot statistics of an annotated manifest.
    Summarize(SummarizeArgs),
    /// Write a synthetic score table with known latent quality.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Directory of reference images (PNG/PPM/PGM).
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Highest level to calibrate (11 covers stage 1, 17 covers stage 2).
    #[arg(long, default_value_t = 17)]
    max_level: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Stage-0 manifest written by `calibrate`.
    #[arg(long)]
    references: PathBuf,
    /// Calibration table CSV.
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Build only stage 1.
    #[arg(long)]
    stage1_only: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated metric ids.
    #[arg(long, default_value = "psnr,ssim,ms_ssim,gms_deviation")]
    metrics: String,
    /// Segment name used for the emitted segments file.
    #[arg(long, default_value = "corpus")]
    segment: String,
}

#[derive(Debug, Args)]
struct FusionInputs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    /// Segment whose subjective scores anchor the logistic fit.
    #[arg(long)]
    anchor: String,
    /// Orientation for metrics that are not built in, as `id=higher_better`.
    #[arg(long = "orientation", value_name = "ID=ORIENTATION")]
    orientations: Vec<String>,
}

#[derive(Debug, Args)]
struct SqbArgs {
    #[command(flatten)]
    inputs: FusionInputs,
    /// RRF constant, or `auto`.
    #[arg(long, default_value = "auto")]
    k: String,
    #[arg(long)]
    out: PathBuf,
    /// Manifest to copy with the `sqb` column filled in.
    #[arg(long)]
    annotate: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KsweepArgs {
    #[command(flatten)]
    inputs: FusionInputs,
    /// Comma-separated k values (`auto` allowed).
    #[arg(long, default_value = "1,10,60,100,1000,10000,100000,1000000,10000000")]
    k_list: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predictions in `image_id,metric_id,score` layout, one method per id.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    /// Method compared against all others in the verdict matrix.
    #[arg(long)]
    designated: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
