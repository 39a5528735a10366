//! `tripmine`: file-mediated pipeline for offline and online triplet mining.
//!
//! Each command reads artifacts, writes its outputs into `--out`, and
//! records a `manifest.json` with the resolved configuration and the
//! SHA-256 of every input and output.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "tripmine", version, about = "Offline and online triplet mining with extreme distances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled Gaussian dataset.
    GenSynth(GenSynthArgs),
    /// Split a dataset into pretraining (X1), mining (X2) and test parts.
    Split(SplitArgs),
    /// Train the supervised classifier whose embedding layer is the feature space.
    Pretrain(PretrainArgs),
    /// Embed a dataset with a checkpoint's embedding layer.
    Embed(EmbedArgs),
    /// Mine one extreme-distance triplet per anchor from feature-space embeddings.
    Mine(MineArgs),
    /// Train an embedding model offline (mined triplets) or online (in-batch mining).
    Train(TrainArgs),
    /// Recall@k and nearest-neighbour accuracy.
    Eval(EvalArgs),
    /// List the nearest gallery items of one query.
    Retrieve(RetrieveArgs),
    /// Anchor-class by negative-class counts of a triplet set.
    Chord(ChordArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
struct Common {
    /// Run directory for outputs and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Random seed.
    #[arg(long, env = "TRIPMINE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct GenSynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = tripmine::data::DEFAULT_CLASSES)]
    classes: usize,
    #[arg(long, default_value_t = tripmine::data::DEFAULT_PER_CLASS)]
    per_class: usize,
    #[arg(long, default_value_t = tripmine::data::DEFAULT_INPUT_DIM)]
    dim: usize,
    /// Distance of each class mean from the origin.
    #[arg(long, default_value_t = tripmine::data::DEFAULT_SEPARATION)]
    separation: f64,
    /// Number of trailing classes with a widened standard deviation.
    #[arg(long, default_value_t = tripmine::data::DEFAULT_WIDE_CLASSES)]
    wide_classes: usize,
    /// Standard deviation of the widened classes (the others use 1).
    #[arg(long, default_value_t = tripmine::data::DEFAULT_WIDE_FACTOR)]
    wide_factor: f64,
    /// Also write the dataset as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file (binary, or CSV by extension).
    #[arg(long)]
    input: PathBuf,
    /// Fractions of X1, X2 and the test part.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.15,0.15")]
    fractions: Vec<f64>,
    /// Split without preserving per-class proportions.
    #[arg(long)]
    no_stratify: bool,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Hidden layer widths (tanh), comma separated; empty for a linear model.
    #[arg(long, value_delimiter = ',', default_value = "128")]
    hidden: Vec<usize>,
    /// Width of the feature / embedding layer.
    #[arg(long, default_value_t = 128)]
    embedding_dim: usize,
}

#[derive(Debug, Args, Serialize)]
struct OptimArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value = "adam", value_parser = ["adam", "sgd"])]
    optimizer: String,
}

#[derive(Debug, Args, Serialize)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training part (X1).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Rows per mini-batch.
    #[arg(long, default_value_t = 45)]
    batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
struct EmbedArgs {
    #[command(flatten)]
    common: Common,
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Dataset to embed.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MetricArgs {
    #[arg(long, default_value = "sqeuclidean", value_parser = ["sqeuclidean", "euclidean"])]
    metric: String,
    /// Normalize vectors to unit length before measuring distances.
    #[arg(long)]
    normalize: bool,
}

#[derive(Debug, Args, Serialize)]
struct MineArgs {
    #[command(flatten)]
    common: Common,
    /// Feature-space embeddings of X2, produced by `embed` with a `pretrain` checkpoint.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "ephn", value_parser = ["epen", "ephn", "hpen", "hphn", "assorted"])]
    policy: String,
    #[command(flatten)]
    metric: MetricArgs,
    /// Z-score threshold of the outlier test.
    #[arg(long, default_value_t = tripmine::DEFAULT_Z_THRESHOLD)]
    z_threshold: f64,
    /// Skip the outlier test.
    #[arg(long)]
    no_outlier_test: bool,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = ["offline", "online"])]
    mode: String,
    /// Training data; repeat to concatenate several files.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Mined triplets (offline mode), binary or CSV by extension.
    #[arg(long)]
    triplets: Option<PathBuf>,
    /// Loss (online mode).
    #[arg(long, default_value = "ephn", value_parser = ["ba", "bsh", "hphn", "nca", "pnca", "ep", "epd", "dws", "epen", "ephn", "hpen", "assorted"])]
    loss: String,
    /// Start from this checkpoint's embedding layers instead of a random initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = tripmine::LossSpec::DEFAULT_MARGIN)]
    margin: f64,
    #[command(flatten)]
    metric: MetricArgs,
    /// Rows per online batch (samples per class = batch size / classes).
    #[arg(long, default_value_t = 45)]
    batch_size: usize,
    /// Triplets per offline batch.
    #[arg(long, default_value_t = 16)]
    triplets_per_batch: usize,
    #[arg(long, default_value_t = tripmine::LossSpec::DEFAULT_DWS_LAMBDA)]
    dws_lambda: f64,
    #[arg(long, default_value_t = tripmine::LossSpec::DEFAULT_DWS_DMIN)]
    dws_dmin: f64,
    #[arg(long, default_value_t = tripmine::LossSpec::DEFAULT_PROXY_MOMENTUM)]
    proxy_momentum: f64,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Query set (embeddings, or raw data with --model).
    #[arg(long)]
    input: PathBuf,
    /// Embed the inputs with this checkpoint first.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Retrieve from this set instead of the query set minus the query.
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8,16")]
    recall: Vec<usize>,
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Debug, Args, Serialize)]
struct RetrieveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Row of the input used as the query; it is excluded from the results.
    #[arg(long)]
    query_index: usize,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[command(flatten)]
    metric: MetricArgs,
}

#[derive(Debug, Args, Serialize)]
struct ChordArgs {
    #[command(flatten)]
    common: Common,
    /// Triplets, binary or CSV by extension.
    #[arg(long)]
    triplets: PathBuf,
    /// Dataset the triplet indices refer to.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Differentiate through a small embedding model instead of the embeddings alone.
    #[arg(long)]
    model_chain: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
