//! Command-line entry point of the humor-classification pipeline.

mod analyze;
mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use humorscope::attention::HeadId;
use humorscope::corpus::Setup;
use humorscope::models::{EncoderKind, LmNormalization};

#[derive(Parser, Debug)]
#[command(name = "humorscope", version, about = "Train and probe humor classifiers on aligned headline pairs")]
pub struct Cli {
    /// Directory holding pretrained encoders, language models and word vectors.
    #[arg(long, env = "HUMORSCOPE_MODEL_CACHE", default_value = "models", global = true)]
    pub model_cache: PathBuf,
    /// Root directory for every output.
    #[arg(long, env = "HUMORSCOPE_OUT", default_value = "runs", global = true)]
    pub out: PathBuf,
    /// Key-value config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load, validate and align a TSV corpus into an archive.
    Prepare(PrepareArgs),
    /// Train one classifier variant.
    Train(TrainArgs),
    /// Score checkpoints and language-model baselines on the test split.
    Evaluate(EvaluateArgs),
    /// Attention and occlusion analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Re-render every figure under a directory from its CSV.
    Report(ReportArgs),
    /// Write the tiny offline models and a synthetic corpus.
    #[command(hide = true)]
    MakeFixtures(FixtureArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Tab-separated input with a header row.
    pub input: PathBuf,
    /// Archive path (default: OUT/corpus.jsonl).
    #[arg(long)]
    pub archive: Option<PathBuf>,
    /// High-quality subset: ratings at least this value (default: the maximum rating present).
    #[arg(long)]
    pub hq_min: Option<i64>,
    /// Fail when any row is rejected.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SetupArg {
    Single,
    Paired,
}

impl From<SetupArg> for Setup {
    fn from(s: SetupArg) -> Setup {
        match s {
            SetupArg::Single => Setup::Single,
            SetupArg::Paired => Setup::Paired,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncoderArg {
    BagOfVectors,
    Recurrent,
    VanillaTransformer,
    PretrainedMlm,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> EncoderKind {
        match e {
            EncoderArg::BagOfVectors => EncoderKind::BagOfVectors,
            EncoderArg::Recurrent => EncoderKind::Recurrent,
            EncoderArg::VanillaTransformer => EncoderKind::VanillaTransformer,
            EncoderArg::PretrainedMlm => EncoderKind::PretrainedMlm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    Total,
    PerToken,
}

impl From<NormArg> for LmNormalization {
    fn from(n: NormArg) -> LmNormalization {
        match n {
            NormArg::Total => LmNormalization::Total,
            NormArg::PerToken => LmNormalization::PerToken,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Prepared archive (default: OUT/corpus.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub encoder: EncoderArg,
    /// Cache id of the pretrained encoder, tokenizer or word vectors.
    #[arg(long)]
    pub encoder_id: String,
    #[arg(long, value_enum)]
    pub setup: SetupArg,
    /// Fit only the classification head.
    #[arg(long)]
    pub frozen: bool,
    /// Checkpoint name (default: derived from the variant).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Hidden size of the recurrent encoder.
    #[arg(long)]
    pub recurrent_hidden: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Trained checkpoint; repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Causal language model id for likelihood baselines; repeatable.
    #[arg(long = "lm")]
    pub lms: Vec<String>,
    #[arg(long, value_enum, default_value = "total")]
    pub lm_normalization: NormArg,
    /// Accuracy table over every model, full test set and high-quality subset.
    #[arg(long)]
    pub table1: bool,
    /// Accuracy per humor type.
    #[arg(long)]
    pub by_type: bool,
    /// Accuracy as a function of the pair Jaccard distance.
    #[arg(long)]
    pub jaccard: bool,
}

#[derive(Args, Debug, Clone)]
pub struct AnalysisInput {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Trained checkpoint to analyse.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Use only the first N test pairs.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct BaseModel {
    /// Reference checkpoint (default: the untouched pretrained encoder).
    #[arg(long)]
    pub base_checkpoint: Option<PathBuf>,
    /// Cache id of the reference pretrained encoder.
    #[arg(long, conflicts_with = "base_checkpoint")]
    pub base_encoder: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Per-head attention divergence from a reference model and between funny/serious twins.
    AttentionDistance {
        #[command(flatten)]
        input: AnalysisInput,
        #[command(flatten)]
        base: BaseModel,
    },
    /// Total attention received by the first and last words and the delimiters.
    SpecialPositions {
        #[command(flatten)]
        input: AnalysisInput,
        #[command(flatten)]
        base: BaseModel,
    },
    /// Per-head attention on modified and unmodified chunks.
    ChunkMaps {
        #[command(flatten)]
        input: AnalysisInput,
    },
    /// Edit localization by one head, with three baselines.
    Localize {
        #[command(flatten)]
        input: AnalysisInput,
        /// Head as LAYER-HEAD (default: the head attending most to modified chunks).
        #[arg(long)]
        head: Option<HeadId>,
        /// Causal language model id for the lowest-likelihood baseline.
        #[arg(long)]
        lm: String,
        /// word<TAB>tag lexicon for the first-verb baseline (default: CACHE/pos-lexicon.tsv).
        #[arg(long)]
        pos_lexicon: Option<PathBuf>,
    },
    /// Attention on modified words replaced by random vocabulary words.
    Replace {
        #[command(flatten)]
        input: AnalysisInput,
        #[arg(long)]
        head: Option<HeadId>,
    },
    /// Mask every word in turn and count decision flips.
    MaskSweep {
        #[command(flatten)]
        input: AnalysisInput,
    },
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory to scan (default: OUT).
    pub dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    /// Model cache directory to create.
    #[arg(long)]
    pub models: PathBuf,
    /// Synthetic TSV corpus to write.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train_pairs: usize,
    #[arg(long, default_value_t = 50)]
    pub val_pairs: usize,
    #[arg(long, default_value_t = 80)]
    pub test_pairs: usize,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    commands::run(cli)
}
