use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dgd", version, about = "Deep generative decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit decoder, mixture and representations on a dataset.
    Train(Box<TrainArgs>),
    /// Find representations for new data under a trained model.
    Infer(InferArgs),
    /// Draw latent points from the mixture and decode them.
    Sample(SampleArgs),
    /// Write the metrics report for one split of a training run.
    Eval(EvalArgs),
    /// Write training representations and mixture means for plotting.
    ExportLatent(ExportArgs),
}

/// Where the data comes from. Counts are read from Matrix Market files,
/// values in `[0, 1]` from CSV.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// `counts` or `binary`; inferred from `--mtx` / `--csv` when omitted.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, conflicts_with = "csv")]
    pub mtx: Option<PathBuf>,
    /// One gene name per line.
    #[arg(long, requires = "mtx")]
    pub genes: Option<PathBuf>,
    /// One label per line, aligned with samples.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// auto, samples-by-genes or genes-by-samples.
    #[arg(long, default_value = "auto")]
    pub orientation: String,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Divide CSV values by 255 (8-bit images).
    #[arg(long, requires = "csv")]
    pub rescale_255: bool,
    /// The CSV has a header row.
    #[arg(long, requires = "csv")]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Rerun from a saved config.json; data and model flags are then ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of mixture components, or `auto` for the number of labels.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub latent_dim: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub lr_decoder: Option<f64>,
    #[arg(long)]
    pub lr_representation: Option<f64>,
    #[arg(long)]
    pub lr_gmm: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dirichlet_alpha: Option<f64>,
    /// Initial component standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// per-epoch, per-batch or per-sample.
    #[arg(long)]
    pub prior_weighting: Option<String>,
    /// Tie each sample to the component of its label.
    #[arg(long)]
    pub supervised: bool,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub split: Vec<f64>,
    /// raw or normalized.
    #[arg(long, default_value = "normalized")]
    pub rmse_space: String,
    /// Record wall-clock time in the history and report.
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// component-means or zeros.
    #[arg(long, default_value = "component-means")]
    pub init: String,
    #[arg(long, default_value_t = 1)]
    pub n_starts: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Draw from this component only.
    #[arg(long)]
    pub component: Option<usize>,
    /// Multiply decoded count-profile outputs by this depth.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    pub run: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Report CSV; defaults to `report-<split>.csv` in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for inferring representations of held-out samples.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
