use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pkge_core::{MergeStrategy, NormKind};

use crate::config::Mode;

/// Parallel TransE knowledge-graph embeddings.
#[derive(Debug, Parser)]
#[command(name = "pkge", version, about, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings and write a checkpoint, manifest and epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on link prediction or triple classification.
    Eval(EvalArgs),
    /// Time the map phase across worker counts.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    Jsonl,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Entity,
    Relation,
    Classify,
    All,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Base random seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// JSON config file; explicit flags take precedence over it. A run
    /// manifest is accepted too (its `config` object is used) [default: none]
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Format of the epoch/round log.
    #[arg(long, value_enum, default_value_t = LogFormat::Jsonl)]
    pub log: LogFormat,
}

/// Hyperparameters shared by `train` and `bench`.
#[derive(Debug, Args)]
pub struct Hyper {
    /// Embedding dimension.
    #[arg(long, default_value_t = 50)]
    pub dim: usize,

    /// Hinge margin.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub margin: f64,

    /// Learning rate.
    #[arg(long = "lr", default_value_t = 0.01, allow_negative_numbers = true)]
    pub learning_rate: f64,

    /// Distance norm: L1 or L2.
    #[arg(long, default_value_t = NormKind::L1)]
    pub norm: NormKind,

    /// Corrupted triples drawn per positive.
    #[arg(long, default_value_t = 1)]
    pub neg_per_pos: usize,

    /// Merge strategy for mr-sgd: random, average or miniloss.
    #[arg(long, default_value_t = MergeStrategy::Average)]
    pub merge: MergeStrategy,

    /// Local epochs between synchronizations (mr-sgd).
    #[arg(long, default_value_t = 1)]
    pub epochs_per_sync: usize,

    /// Weight the average merge by per-worker update counts [default: off]
    #[arg(long)]
    pub weighted_average: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,

    #[command(flatten)]
    pub hyper: Hyper,

    /// Training triples (tab-separated head, relation, tail).
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,

    /// Validation triples, checked against the training vocabulary [default: none]
    #[arg(long, value_name = "PATH")]
    pub valid: Option<PathBuf>,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Trainer.
    #[arg(long, value_enum, default_value_t = Mode::Single)]
    pub mode: Mode,

    /// Worker threads [default: available cores, capped by PKGE_THREADS].
    #[arg(long)]
    pub workers: Option<usize>,

    /// Maximum epochs.
    #[arg(long = "epochs", default_value_t = 1000)]
    pub max_epochs: usize,

    /// Stop once the relative loss change drops to this.
    #[arg(long = "eps", default_value_t = 1e-4, allow_negative_numbers = true)]
    pub convergence_eps: f64,

    /// Drop and count validation triples with unseen labels instead of failing [default: off]
    #[arg(long)]
    pub drop_oov: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,

    /// Checkpoint file, or a training output directory holding model.pkge.
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    /// Test triples.
    #[arg(long, value_name = "PATH")]
    pub test: PathBuf,

    /// Validation triples; needed by classify, and filtered out in the filtered setting [default: none]
    #[arg(long, value_name = "PATH")]
    pub valid: Option<PathBuf>,

    /// Training triples for the filtered setting [default: the manifest's input].
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,

    /// Task to evaluate.
    #[arg(long, value_enum, default_value_t = EvalTask::Entity)]
    pub task: EvalTask,

    /// Rank in the filtered setting instead of raw [default: off]
    #[arg(long)]
    pub filtered: bool,

    /// Cut-offs for Hits@k.
    #[arg(long, value_delimiter = ',', default_value = "1,3,10")]
    pub ks: Vec<usize>,

    /// Distance norm [default: the manifest's, else L1].
    #[arg(long)]
    pub norm: Option<NormKind>,

    /// Drop and count evaluation triples with unseen labels instead of failing [default: off]
    #[arg(long)]
    pub drop_oov: bool,

    /// Write the metrics JSON here as well as to stdout [default: none]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,

    #[command(flatten)]
    pub hyper: Hyper,

    /// Worker counts to compare.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub workers_list: Vec<usize>,

    /// Trainer to time.
    #[arg(long, value_enum, default_value_t = Mode::MrSgd)]
    pub mode: Mode,

    /// Sync rounds per worker count.
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,

    /// Generate a synthetic translation KG instead of reading --input [default: off]
    #[arg(long)]
    pub synthetic: bool,

    /// Synthetic entities.
    #[arg(long, default_value_t = 5000)]
    pub entities: usize,

    /// Synthetic relations.
    #[arg(long, default_value_t = 50)]
    pub relations: usize,

    /// Synthetic triples (upper bound; each relation yields at most one triple per head).
    #[arg(long, default_value_t = 100_000)]
    pub triples: usize,

    /// Dimension of the synthetic latent space.
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,

    /// Training triples when not synthetic [default: none]
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,

    /// Directory for bench.json, bench.txt and the round log.
    #[arg(long, value_name = "DIR", default_value = "bench-out")]
    pub out: PathBuf,
}
