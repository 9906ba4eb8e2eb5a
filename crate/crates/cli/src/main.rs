//! `deepfood` command-line tool.
//!
//! Machine-readable output goes to stdout, diagnostics to stderr. Exit
//! codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deepfood::data::{SplitScheme, SplitSel};
use deepfood::eval::BenchOp;

#[derive(Parser, Debug)]
#[command(name = "deepfood", version, about = "Train, evaluate and benchmark Inception-style food classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network from scratch on a manifest.
    Train(TrainArgs),
    /// Load a checkpoint, replace its classifier and continue training.
    Finetune(FinetuneArgs),
    /// Top-k accuracy of a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Classify one image.
    Predict(PredictArgs),
    /// Time convolution kernels or full network passes.
    Bench(BenchArgs),
    /// Dataset conversion and preparation.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Print the spec and tensor table of a checkpoint.
    InspectCheckpoint(InspectArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Training config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples to train on.
    #[arg(long, default_value = "train")]
    split: SplitSel,
    /// Crop each sample to its bounding box before resizing.
    #[arg(long)]
    use_bbox: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Measure per-channel input means on the training split.
    #[arg(long)]
    compute_means: bool,
    /// Keep decoded images in memory between epochs.
    #[arg(long)]
    cache: bool,
    /// Training log destination (JSON lines); stdout when absent.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long, default_value = "model.dfck")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Network: `deepfood22`, `mini2`, or a spec JSON file.
    #[arg(long, default_value = "deepfood22")]
    net: String,
    #[arg(long, value_enum)]
    head: Option<Head>,
    /// Class count; must match the manifest when given.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Pretrained checkpoint.
    #[arg(long)]
    from: PathBuf,
    /// New class count; defaults to the manifest's.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Head {
    GlobalAvg,
    Paper,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: SplitSel,
    /// Comma-separated cut-offs; 1 and 5 are always reported.
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    topk: Vec<usize>,
    #[arg(long)]
    use_bbox: bool,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Print a table instead of JSON.
    #[arg(long)]
    human: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Crop box `x1,y1,x2,y2` applied before resizing.
    #[arg(long, value_delimiter = ',')]
    bbox: Option<Vec<i64>>,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    #[arg(long)]
    human: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// One of conv-naive, conv-im2col, conv-compare, forward, forward-backward.
    #[arg(long)]
    op: BenchOp,
    /// Convolution input `n,c,h,w`.
    #[arg(long, value_delimiter = ',', default_value = "1,64,56,56")]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    filters: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1)]
    pad: usize,
    /// Network for forward/forward-backward: `deepfood22`, `mini2`, or a spec file.
    #[arg(long, default_value = "deepfood22")]
    net: String,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    human: bool,
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Convert a UEC-Food directory (category.txt, <id>/bb_info.txt).
    ImportUec {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a Food-101 directory (meta/, images/).
    ImportFood101 {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign a stratified train/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// `folds:TOTAL:TRAIN` or `fraction:F`.
        #[arg(long, default_value = "folds:5:3")]
        scheme: SplitScheme,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic pattern dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "plain")]
        kind: SynthKind,
        /// Number of pattern classes.
        #[arg(long, default_value_t = 8)]
        classes: usize,
        /// Index of the first pattern used.
        #[arg(long, default_value_t = 0)]
        first: usize,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        /// Image side for plain sets.
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 96)]
        canvas: u32,
        #[arg(long, default_value_t = 32)]
        patch: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthKind {
    Plain,
    Cluttered,
}

#[derive(Args, Debug)]
struct InspectArgs {
    path: PathBuf,
    #[arg(long)]
    human: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
