use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;

#[derive(Debug, Parser)]
#[command(name = "maftlab", version, about = "Multilingual speech SSL pipeline: corpus prep, sampling, units, pretraining, heads, scoring")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Store root; manifest audio paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    pub store: PathBuf,
    /// Master seed. Overrides any `seed` key in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: LevelFilter,
    /// Worker threads for parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest audio and tabulate durations.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Voice-activity segmentation and duration filtering.
    #[command(subcommand)]
    Segment(SegmentCmd),
    /// Temperature sampling plans and upsampled manifests.
    #[command(subcommand)]
    Sampler(SamplerCmd),
    /// Frame features, k-means codebooks and unit targets.
    #[command(subcommand)]
    Units(UnitsCmd),
    /// Masked-prediction pretraining.
    #[command(subcommand)]
    Ssl(SslCmd),
    /// SLID and ASR fine-tuning and decoding.
    #[command(subcommand)]
    Heads(HeadsCmd),
    /// Score predictions.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Run experiment recipes.
    #[command(subcommand)]
    Experiments(ExperimentsCmd),
    /// CSV (and optional SVG) for duration tables and low-resource reports.
    #[command(subcommand)]
    Plots(PlotsCmd),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Convert every .wav under a directory into the store and write its manifest.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        lang_map: PathBuf,
        /// Output store (receives audio/ and manifest.tsv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-language hours, descending.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SegmentCmd {
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vad_config: Option<PathBuf>,
        #[arg(long)]
        frame_ms: Option<u32>,
        #[arg(long, allow_hyphen_values = true)]
        energy_threshold_db: Option<f64>,
        #[arg(long)]
        min_silence_ms: Option<u32>,
        /// Output store (receives segments/, manifest.tsv and config.txt).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SamplerCmd {
    Plan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        alpha: f64,
        /// Comma-separated language codes kept out of upsampling.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        /// Defaults to the smallest total that keeps every repetition factor >= 1.
        #[arg(long)]
        target_hours: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a manifest into train and validation parts per language.
    Carve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_valid: PathBuf,
    },
    Materialize {
        #[arg(long)]
        plan: PathBuf,
        /// Training manifest; defaults to the one recorded in the plan.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        target_hours: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum UnitsCmd {
    Features {
        #[arg(long)]
        manifest: PathBuf,
        /// log_mel, mfcc, teacher_layer or teacher_layer:N.
        #[arg(long, default_value = "mfcc")]
        kind: String,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Kmeans {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Restrict clustering to a per-language sample of this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        cap_sec: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    Assign {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SslCmd {
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manifest with train and valid splits.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the step with the lowest validation loss.
    Select {
        #[arg(long)]
        history: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    /// Manifest with train, valid and test splits.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated encoder learning rates.
    #[arg(long, value_delimiter = ',')]
    pub encoder_lrs: Vec<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Language codes counted in `avg`; defaults to the bundled African list.
    #[arg(long)]
    pub african_set: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum HeadsCmd {
    Slid(FinetuneArgs),
    Asr {
        #[command(flatten)]
        common: FinetuneArgs,
        #[arg(long)]
        transcripts: PathBuf,
        /// Character vocabulary; built from the training transcripts when the file does not exist.
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Run a fine-tuned model over one split of a manifest.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Slid,
    Asr,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    /// Score a predictions TSV against references. Columns are found by
    /// header: `utterance_id` plus `predicted`/`hypothesis` in the
    /// prediction file and `label` or `lang`+`reference` in the reference file.
    Score {
        #[arg(long)]
        task: TaskArg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        african_set: Option<PathBuf>,
        /// Confusion pairs at or above this row rate are listed.
        #[arg(long, default_value_t = 0.1)]
        confusion_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExperimentsCmd {
    Run {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum PlotsCmd {
    /// Input is a manifest, a duration CSV or a low-resource report CSV.
    Emit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
}
