use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use webaug::matcher::MatchMode;

#[derive(Debug, Parser)]
#[command(
    name = "webaug",
    version,
    about = "Augment a labeled image dataset from web metadata"
)]
pub struct Cli {
    /// Worker threads for parallel stages; output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus, lexicon, score table and ground truth.
    Gen(GenArgs),
    /// Label corpus items by phrase matches (E_T).
    LabelWeb(PipelineArgs),
    /// Label the unlabeled pool by visual confidence alone (E_V).
    LabelDcnn(PipelineArgs),
    /// Keep pairs whose visual confidence reaches the threshold.
    Filter(FilterArgs),
    /// Collect low-confidence web pairs as noise examples (N_VTweb).
    CollectNoise(PipelineArgs),
    /// Expand filtered and noise pairs into classifier training text.
    BuildTextsets(PipelineArgs),
    /// Train the text classifier on the built text sets.
    TrainTextclf(PipelineArgs),
    /// Label corpus items with the trained classifier (E_Tweb+).
    PredictTextclf(PipelineArgs),
    /// Union the web-filtered and classifier-filtered sets (E_VT).
    Assemble(PipelineArgs),
    /// Cap per-category counts of the assembled set.
    Balance(PipelineArgs),
    /// Per-dataset counts, field credits and confidence histograms.
    Stats(PipelineArgs),
    /// Accuracy of a dataset against ground truth.
    Accuracy(AccuracyArgs),
    /// Dataset size and accuracy across a threshold grid.
    Sweep(SweepArgs),
    /// NDCG for ranked relevance lists, one query per line.
    Ndcg(NdcgArgs),
    /// Every stage in order, with a manifest.
    Run(PipelineArgs),
}

/// Settings shared by the pipeline stages. Flags override `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<MatchMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alpha_prime: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub hard_cap: Option<usize>,
    #[arg(long)]
    pub target_cap: Option<usize>,
    /// Cap noise text records at this multiple of the positive records.
    #[arg(long)]
    pub negative_ratio: Option<f64>,
    /// Skip the text classifier branch.
    #[arg(long)]
    pub no_textclf: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterTarget {
    /// E_T at alpha, giving E_VTweb.
    Web,
    /// E_Tweb+ at alpha', giving E_VTweb+.
    Textclf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long, value_enum, default_value_t = FilterTarget::Web)]
    pub target: FilterTarget,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub categories: Option<u32>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub popularity_skew: Option<f64>,
    #[arg(long)]
    pub score_sharpness: Option<f64>,
    #[arg(long)]
    pub noise_flip_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    /// Labeled dataset file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Ground-truth file.
    #[arg(long)]
    pub truth: PathBuf,
    /// Pairs sampled per category.
    #[arg(long, default_value_t = 10)]
    pub per_category: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepTarget {
    /// Filter E_T (from `--input` or the run directory).
    Web,
    /// Label the unlabeled pool by confidence alone.
    Visual,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub target: SweepTarget,
    /// Ascending thresholds, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    pub grid: Vec<f64>,
    /// Ground truth for the accuracy column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Dataset to filter for `--target web`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Where to write the table; standard output otherwise.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct NdcgArgs {
    /// Query file: grades as a comma list, a space, then the depth.
    #[arg(long)]
    pub queries: PathBuf,
}
