use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use embdistill::retrieval::Metric;
use embdistill::trainer::{LossKind, OptimizerKind, TrainConfig};

use crate::config::Method;

#[derive(Debug, Parser)]
#[command(name = "embdistill", version, about = "Distill, reduce and evaluate embedding vectors")]
pub struct Cli {
    /// Default directory for datasets: `synth` writes there and other
    /// commands read `data.manifest` from it when no data flags are given.
    #[arg(long, global = true, env = "EMBDISTILL_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/val dataset with a manifest.
    Synth(SynthArgs),
    /// Fit PCA, ICA or a Gaussian random projection per target size.
    Reduce(ReduceArgs),
    /// Train a new projection head on the input features with a metric-learning loss.
    Train(TrainArgs),
    /// Train, then repeatedly halve the head by weight magnitude, rewind and retrain.
    Prune(PruneArgs),
    /// Train a small student against the input features as teacher.
    Distill(DistillArgs),
    /// Retrieval MAP and MR1 of an embedding file.
    Evaluate(EvaluateArgs),
    /// Time brute-force distance computation at several sizes.
    Bench(BenchArgs),
    /// Merge the summaries of finished runs into one table.
    Report(ReportArgs),
    /// Run an experiment described by a TOML file.
    Run(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Separable,
    Structured,
    Benchmark,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "separable")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the number of training cliques.
    #[arg(long)]
    pub cliques: Option<usize>,
    #[arg(long)]
    pub val_cliques: Option<usize>,
    /// Override the feature dimensionality.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Manifest listing `train` and `val` splits.
    #[arg(long, conflicts_with_all = ["train", "val"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "val")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub val: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_metric, default_value = "squared-euclidean")]
    pub metric: Metric,
    /// Also write per-query average precision as CSV.
    #[arg(long)]
    pub per_query: bool,
    #[arg(long)]
    pub force: bool,
}

/// Training flags; anything left unset keeps the library default.
#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Epoch count; milestones scale with it unless given.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<usize>>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long)]
    pub classes_per_batch: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub aux_triplet_weight: Option<f64>,
}

impl TrainFlags {
    pub fn apply(&self, mut t: TrainConfig) -> TrainConfig {
        if let Some(e) = self.epochs {
            t = t.short_budget(e);
        }
        macro_rules! set {
            ($($field:ident => $($path:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { t.$($path).+ = v; })*
            };
        }
        set!(
            optimizer => optimizer,
            lr => lr,
            momentum => momentum,
            milestones => milestones,
            lr_decay => lr_decay,
            classes_per_batch => classes_per_batch,
            samples_per_class => samples_per_class,
            margin => loss.margin,
            temperature => loss.temperature,
            aux_triplet_weight => loss.aux_triplet_weight,
        );
        if self.batches_per_epoch.is_some() {
            t.batches_per_epoch = self.batches_per_epoch;
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReduceMethod {
    Pca,
    Ica,
    Grp,
}

impl From<ReduceMethod> for Method {
    fn from(m: ReduceMethod) -> Self {
        match m {
            ReduceMethod::Pca => Method::Pca,
            ReduceMethod::Ica => Method::Ica,
            ReduceMethod::Grp => Method::Grp,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long, value_enum)]
    pub method: ReduceMethod,
    /// Target sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_loss)]
    pub loss: LossKind,
    /// Target sizes, comma separated.
    #[arg(long = "dim", alias = "dims", value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    /// Train on random features instead of the inputs (from-scratch baseline).
    #[arg(long)]
    pub random_features: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long, value_parser = parse_loss)]
    pub loss: LossKind,
    /// Starting size of the head.
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub max_map_drop: Option<f64>,
    #[arg(long)]
    pub min_dim: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long, value_parser = parse_loss, default_value = "distance-matching")]
    pub loss: LossKind,
    #[arg(long = "dim", alias = "dims", value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Embedding file to evaluate.
    pub input: PathBuf,
    #[arg(long, value_parser = parse_metric, default_value = "squared-euclidean")]
    pub metric: Metric,
    /// Write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write per-query average precision here as CSV.
    #[arg(long)]
    pub per_query: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "256,4096")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub n_refs: usize,
    #[arg(long, default_value_t = 7)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directories of finished runs.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Write the merged summary here as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Use this output directory instead of the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: embdistill::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: embdistill::Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: embdistill::Error| e.to_string())
}
