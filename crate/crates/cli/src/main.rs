//! `p2s`: data generation, training, binaural rendering and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use p2s_core::scene::dataset::Split;
use p2s_core::sparse::FeatureMode;
use p2s_core::train::{LossMode, Preset};

use crate::config::CliError;

#[derive(Parser, Debug)]
#[command(name = "p2s", version, about = "Point-cloud conditioned mono-to-binaural synthesis")]
struct Cli {
    /// Worker threads (default: all cores). 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "P2S_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset split.
    GenData(GenDataArgs),
    /// Train the joint vision/audio model.
    Train(TrainArgs),
    /// Render binaural audio for a mono clip and a scene.
    Binauralize(BinauralizeArgs),
    /// Score a checkpoint and the baselines on a test split.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub clip_secs: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Comma-separated instrument classes.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// JSON file with any of the above; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training dataset; without it examples are generated on the fly.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation dataset; without it validation scenes are generated.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[arg(long, value_parser = parse_features)]
    pub features: Option<FeatureMode>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// JSON-lines training log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Warm-start from a compatible checkpoint.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BinauralizeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub mono: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Turn the scene a quarter turn counterclockwise before rendering.
    #[arg(long)]
    pub rotate: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_features(s: &str) -> Result<FeatureMode, String> {
    match s {
        "depth" => Ok(FeatureMode::Depth),
        "rgb-depth" => Ok(FeatureMode::RgbDepth),
        _ => Err(format!("unknown feature mode {s:?} (expected depth or rgb-depth)")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    eprintln!("threads: {threads}");
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a, threads),
        Command::Binauralize(a) => commands::binauralize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
