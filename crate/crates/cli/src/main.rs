//! `embedkit`: reproducible pipelines for training, indexing, searching and
//! evaluating toy bi-encoder embedding models.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "embedkit",
    version,
    about = "Train, index, search and evaluate toy embedding models"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override; wins over the configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Configuration override, e.g. `--set stage.optim.learning_rate=2e-3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Masked-autoencoder pretraining (`retromae_pretrain` or `retromae_distill`).
    Pretrain(StageArgs),
    /// Contrastive training (`contrastive` or `domain_adapt`).
    Train(StageArgs),
    /// Score-distribution distillation (`score_distill` or `self_distill`).
    Distill(StageArgs),
    /// Weighted average of checkpoints.
    Merge(MergeArgs),
    /// Replace the negatives of training pairs with mined hard negatives.
    Mine(MineArgs),
    /// Add a perturbed positive as negative to pairs that have none.
    Perturb(PerturbArgs),
    /// Encode a corpus into a dense or sparse index.
    Index(IndexArgs),
    /// Search an index with a query file and write a run file.
    Search(SearchArgs),
    /// Score a run against judgments.
    Eval(EvalArgs),
    /// Build a vocabulary from training files.
    Vocab(VocabArgs),
    /// Generate a synthetic dataset with a known answer key.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Dense,
    Sparse,
}

#[derive(Args, Debug, Serialize)]
pub struct StageArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Training pairs (JSONL).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Plain texts for pretraining, one per line.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// Student checkpoint to start from; a fresh `[model]` is built otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub output: PathBuf,
    /// Total stage length; overrides `stage.steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Stop once this many steps are done, keeping the stage schedule.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Per-step loss CSV (default: `<output>.metrics.csv`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Continue from a saved training state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Save the training state (optimizer moments, data position) here.
    #[arg(long)]
    pub save_state: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct MergeArgs {
    /// Checkpoint to merge; repeat for each.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Weight per checkpoint, in order (default: uniform).
    #[arg(long = "weight")]
    pub weights: Vec<f64>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct MineArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Corpus (JSONL with `id` and `text`).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct IndexArgs {
    pub kind: IndexKind,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SearchArgs {
    pub kind: IndexKind,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Queries as `query_id<TAB>text` lines.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Task definition for instruction-formatted queries.
    #[arg(long)]
    pub instruction: Option<String>,
    /// Output run file.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct VocabArgs {
    /// Training pairs (JSONL); repeatable.
    #[arg(long)]
    pub pairs: Vec<PathBuf>,
    /// Corpus (JSONL); repeatable.
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    /// Plain text, one item per line; repeatable.
    #[arg(long)]
    pub texts: Vec<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    pub max_size: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let g = &cli.global;
    let result = (|| {
        if let Some(n) = g.threads {
            embedkit::par::init_threads(n)?;
        }
        match &cli.command {
            Command::Pretrain(a) => commands::stage(g, commands::StageCommand::Pretrain, a),
            Command::Train(a) => commands::stage(g, commands::StageCommand::Train, a),
            Command::Distill(a) => commands::stage(g, commands::StageCommand::Distill, a),
            Command::Merge(a) => commands::merge(g, a),
            Command::Mine(a) => commands::mine(g, a),
            Command::Perturb(a) => commands::perturb(g, a),
            Command::Index(a) => commands::index(g, a),
            Command::Search(a) => commands::search(g, a),
            Command::Eval(a) => commands::eval(g, a),
            Command::Vocab(a) => commands::vocab(g, a),
            Command::Synth(a) => commands::synth(g, a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
