use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("{count} malformed row(s); first: row {first_row}: {first_reason}")]
    RejectedRows {
        count: usize,
        first_row: usize,
        first_reason: String,
    },

    #[error("duplicate pair_id {0:?}")]
    DuplicatePairId(String),

    #[error("no pairs")]
    NoPairs,

    #[error("sentences are identical after tokenization: {0:?}")]
    IdenticalSentences(String),

    #[error("empty sentence")]
    EmptySentence,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("untrained model: {0}")]
    UntrainedModel(String),

    #[error("unsupported for this encoder: {0}")]
    Unsupported(String),

    #[error("single-class input: threshold search needs both labels")]
    SingleClass,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("tokenizer mismatch: {0}")]
    TokenizerMismatch(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid head id {0:?}")]
    InvalidHead(String),

    #[error("bad attention file: {0}")]
    BadAttentionFile(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("safetensors error: {0}")]
    SafeTensors(String),

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
