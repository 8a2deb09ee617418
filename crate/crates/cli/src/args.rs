use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use salad::trainer::Ablation;

#[derive(Debug, Parser)]
#[command(
    name = "salad",
    version,
    about = "Self-supervised aggregation learning for anomaly detection"
)]
pub struct Cli {
    /// Base directory for relative output paths. Inputs are not affected.
    #[arg(long, env = "SALAD_OUTPUT_ROOT", global = true)]
    pub output_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic grouped dataset of PGM images plus a manifest.
    Synth(SynthArgs),
    /// Segment images by hysteresis thresholding and resize-pad them.
    Segment(SegmentArgs),
    /// Split a manifest into group-disjoint train/validation/test manifests.
    Split(SplitArgs),
    /// Pre-train and progressively train one or more replicates.
    Train(TrainArgs),
    /// Score a manifest with a trained checkpoint.
    Score(ScoreArgs),
    /// Compute AUC, AUPRC and curves from a score file.
    Eval(EvalArgs),
    /// Score and evaluate every replicate of a training run and summarize.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub anomaly_fraction: Option<f64>,
    #[arg(long)]
    pub images_per_group: Option<usize>,
    #[arg(long)]
    pub body_parts: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write train/, validation/ and test/ sets instead of a single set.
    /// Held-out sets are half anomalous.
    #[arg(long)]
    pub benchmark: bool,
    /// Images per held-out set with --benchmark.
    #[arg(long, default_value_t = 128)]
    pub held_out: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ConnectivityArg {
    #[value(name = "4")]
    Four,
    #[value(name = "8")]
    Eight,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub lo: f64,
    #[arg(long, default_value_t = 0.3)]
    pub hi: f64,
    #[arg(long, value_enum, default_value = "8")]
    pub connectivity: ConnectivityArg,
    /// Keep every seeded component instead of only the largest.
    #[arg(long)]
    pub all_components: bool,
    /// Side of the square output after resize-pad; 0 keeps the input size.
    #[arg(long, default_value_t = 0)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub train_groups: f64,
    #[arg(long, default_value_t = 0.05)]
    pub train_anomalous: f64,
    #[arg(long, default_value_t = 0.025)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Full,
    NoAgg,
    NoMse,
    NoSs,
    Dae,
    Memdae,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoAgg => Ablation::NoAgg,
            AblationArg::NoMse => Ablation::NoMse,
            AblationArg::NoSs => Ablation::NoSs,
            AblationArg::Dae => Ablation::Dae,
            AblationArg::Memdae => Ablation::MemDae,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// TOML file of config keys applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single key override, `key=value` in TOML syntax. Repeatable; applied
    /// after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum, default_value = "full")]
    pub ablate: AblationArg,
    /// Base seed; replicate `i` uses `seed + i`. Without it the config's
    /// own seeds are used for a single replicate.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: u64,
    /// Run replicates concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Continue from the latest round checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub epochs_per_round: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub k_score: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output score CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Neighbors in the vote; defaults to the checkpoint's `k_score`.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreColumn {
    Raw,
    Normalized,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Output directory for metrics.csv, roc.csv and pr.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "raw")]
    pub column: ScoreColumn,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `salad train`.
    #[arg(long)]
    pub runs: PathBuf,
    /// Test manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "raw")]
    pub column: ScoreColumn,
}
