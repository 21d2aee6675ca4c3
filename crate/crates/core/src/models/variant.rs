use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::cache::ModelCache;
use super::params::{Init, ParamStore};
use super::recurrent::RecurrentEncoder;
use super::tokenizer::{SubwordLayout, SubwordTokenizer};
use super::transformer::{TransformerConfig, TransformerEncoder};
use super::vectors::{BagOfVectors, WordVectors};
use crate::corpus::{word_tokenize, Setup};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    BagOfVectors,
    Recurrent,
    VanillaTransformer,
    PretrainedMlm,
}

impl EncoderKind {
    pub fn has_attention(self) -> bool {
        matches!(self, EncoderKind::VanillaTransformer | EncoderKind::PretrainedMlm)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::BagOfVectors => "bag_of_vectors",
            EncoderKind::Recurrent => "recurrent",
            EncoderKind::VanillaTransformer => "vanilla_transformer",
            EncoderKind::PretrainedMlm => "pretrained_mlm",
        })
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown encoder kind {s:?}")))
    }
}

pub const DEFAULT_RECURRENT_HIDDEN: usize = 256;

/// Serializable description of a classifier: setup, encoder and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub setup: Setup,
    pub encoder_kind: EncoderKind,
    /// Model-cache id of the weights / word vectors / architecture config.
    pub encoder_id: String,
    pub frozen: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrent_hidden: Option<usize>,
}

impl VariantConfig {
    /// Short name used in reports, e.g. `pretrained_mlm:bert-base-uncased/single/finetuned`.
    pub fn label(&self) -> String {
        format!(
            "{}:{}/{}/{}",
            self.encoder_kind,
            self.encoder_id,
            match self.setup {
                Setup::Single => "1S",
                Setup::Paired => "PS",
            },
            if self.frozen { "frozen" } else { "finetuned" }
        )
    }
}

/// A sentence as the classifier sees it: word tokens plus per-word mask flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordInput {
    pub words: Vec<String>,
    pub masked: Vec<bool>,
}

impl WordInput {
    pub fn new(sentence: &str) -> Self {
        Self::from_words(word_tokenize(sentence))
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let masked = vec![false; words.len()];
        WordInput { words, masked }
    }

    /// Copy with word `i` masked.
    pub fn masking(&self, i: usize) -> Self {
        let mut out = self.clone();
        out.masked[i] = true;
        out
    }
}

#[derive(Debug, Clone)]
pub struct SentenceEmbedding {
    pub vector: Vec<f32>,
    /// Set when the encoder could not represent the sentence (bag of
    /// vectors with no known word).
    pub flagged: bool,
}

pub enum Encoder {
    BagOfVectors(BagOfVectors),
    Recurrent(RecurrentEncoder),
    Transformer {
        model: TransformerEncoder,
        tokenizer: SubwordTokenizer,
    },
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Encoder::BagOfVectors(b) => b.vectors.dim(),
            Encoder::Recurrent(r) => r.dim(),
            Encoder::Transformer { model, .. } => model.dim(),
        }
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match self {
            Encoder::BagOfVectors(_) => None,
            Encoder::Recurrent(r) => Some(r.params()),
            Encoder::Transformer { model, .. } => Some(model.params()),
        }
    }

    fn embed(&self, inputs: &[&WordInput]) -> Result<Tensor> {
        if inputs.iter().any(|i| i.words.is_empty()) {
            return Err(Error::EmptySentence);
        }
        match self {
            Encoder::BagOfVectors(b) => {
                let batch: Vec<_> = inputs.iter().map(|i| (&i.words[..], &i.masked[..])).collect();
                b.embed(&batch)
            }
            Encoder::Recurrent(r) => {
                let batch: Vec<_> = inputs.iter().map(|i| (&i.words[..], &i.masked[..])).collect();
                r.embed(&batch)
            }
            Encoder::Transformer { model, tokenizer } => {
                let layouts = inputs
                    .iter()
                    .map(|i| tokenizer.layout(&i.words, Some(&i.masked)))
                    .collect::<Result<Vec<_>>>()?;
                model.pooled(&layouts)
            }
        }
    }
}

/// One linear unit over the (possibly concatenated) sentence embedding.
/// Zero-initialised, so an untouched head outputs probability 0.5.
pub struct LinearHead {
    params: ParamStore,
    weight: Tensor,
    bias: Tensor,
}

impl LinearHead {
    pub fn new(input_dim: usize) -> Result<Self> {
        let mut params = ParamStore::new(0);
        let weight = params.get("head.weight", &[1, input_dim], Init::Zeros)?;
        let bias = params.get("head.bias", &[1], Init::Zeros)?;
        Ok(LinearHead {
            params,
            weight,
            bias,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(super::nn::linear(x, &self.weight, Some(&self.bias))?.squeeze(1)?)
    }
}

pub struct ModelVariant {
    pub config: VariantConfig,
    encoder: Encoder,
    head: LinearHead,
    trained: bool,
}

impl fmt::Debug for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelVariant")
            .field("config", &self.config)
            .field("trained", &self.trained)
            .finish_non_exhaustive()
    }
}

const CHECKPOINT_FORMAT: &str = "humorscope-checkpoint/1";

impl ModelVariant {
    /// Assembles an untrained variant from the model cache.
    pub fn build(config: VariantConfig, cache: &ModelCache) -> Result<Self> {
        let encoder = match config.encoder_kind {
            EncoderKind::BagOfVectors => Encoder::BagOfVectors(BagOfVectors {
                vectors: WordVectors::load(&cache.vectors_path(&config.encoder_id)?)?,
            }),
            EncoderKind::Recurrent => Encoder::Recurrent(RecurrentEncoder::new(
                WordVectors::load(&cache.vectors_path(&config.encoder_id)?)?,
                config.recurrent_hidden.unwrap_or(DEFAULT_RECURRENT_HIDDEN),
                config.seed,
            )?),
            EncoderKind::VanillaTransformer | EncoderKind::PretrainedMlm => {
                let dir = cache.resolve(&config.encoder_id)?;
                let cfg_path = dir.join("config.json");
                let text = std::fs::read_to_string(&cfg_path)
                    .map_err(|_| Error::MissingArtifact(cfg_path.clone()))?;
                let tcfg = TransformerConfig::from_hf_json(&text)?;
                let tokenizer = SubwordTokenizer::from_dir(&dir, tcfg.family.tokenizer_kind())?;
                let model = if config.encoder_kind == EncoderKind::PretrainedMlm {
                    TransformerEncoder::from_checkpoint(tcfg, &dir.join("model.safetensors"))?
                } else {
                    TransformerEncoder::random(tcfg, config.seed)?
                };
                Encoder::Transformer { model, tokenizer }
            }
        };
        Self::from_encoder(config, encoder)
    }

    pub fn from_encoder(mut config: VariantConfig, encoder: Encoder) -> Result<Self> {
        if matches!(encoder, Encoder::BagOfVectors(_)) {
            config.frozen = true;
        }
        let width = match config.setup {
            Setup::Single => encoder.dim(),
            Setup::Paired => 2 * encoder.dim(),
        };
        Ok(ModelVariant {
            config,
            head: LinearHead::new(width)?,
            encoder,
            trained: false,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Variables the optimiser may update: the head, plus the encoder
    /// unless the variant is frozen.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars = self.head.params.vars();
        if !self.config.frozen {
            if let Some(p) = self.encoder.params() {
                vars.extend(p.vars());
            }
        }
        vars
    }

    pub fn encoder_checksum(&self) -> Result<String> {
        match self.encoder.params() {
            Some(p) => p.checksum(),
            None => Ok(String::new()),
        }
    }

    /// Transformer and tokenizer, for attention extraction.
    pub fn transformer(&self) -> Result<(&TransformerEncoder, &SubwordTokenizer)> {
        match &self.encoder {
            Encoder::Transformer { model, tokenizer } => Ok((model, tokenizer)),
            _ => Err(Error::Unsupported(format!(
                "{} has no attention heads",
                self.config.encoder_kind
            ))),
        }
    }

    pub fn layout(&self, input: &WordInput) -> Result<SubwordLayout> {
        let (_, tokenizer) = self.transformer()?;
        tokenizer.layout(&input.words, Some(&input.masked))
    }

    pub fn encode(&self, sentence: &str) -> Result<SentenceEmbedding> {
        let input = WordInput::new(sentence);
        let flagged = match &self.encoder {
            Encoder::BagOfVectors(b) => b.embed_one(&input.words, &input.masked).1,
            _ => false,
        };
        let vector = self
            .encoder
            .embed(&[&input])?
            .squeeze(0)?
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?;
        Ok(SentenceEmbedding { vector, flagged })
    }

    /// Logits for a batch of instances; each instance has one input in the
    /// single setup and two in the paired setup.
    pub fn logits(&self, batch: &[Vec<WordInput>]) -> Result<Tensor> {
        let arity = match self.config.setup {
            Setup::Single => 1,
            Setup::Paired => 2,
        };
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch".into()));
        }
        if let Some(bad) = batch.iter().find(|i| i.len() != arity) {
            return Err(Error::Config(format!(
                "{} setup expects {arity} sentence(s) per instance, got {}",
                match self.config.setup {
                    Setup::Single => "single",
                    Setup::Paired => "paired",
                },
                bad.len()
            )));
        }
        let embed = |k: usize| -> Result<Tensor> {
            let inputs: Vec<&WordInput> = batch.iter().map(|i| &i[k]).collect();
            let e = self.encoder.embed(&inputs)?;
            Ok(if self.config.frozen { e.detach() } else { e })
        };
        let features = match self.config.setup {
            Setup::Single => embed(0)?,
            Setup::Paired => Tensor::cat(&[embed(0)?, embed(1)?], 1)?,
        };
        self.head.logits(&features)
    }

    /// Probabilities for a batch, requiring a trained head.
    pub fn predict_batch(&self, batch: &[Vec<WordInput>]) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::UntrainedModel(self.config.label()));
        }
        let p = candle_nn::ops::sigmoid(&self.logits(batch)?)?.to_vec1::<f32>()?;
        Ok(p.into_iter().map(f64::from).collect())
    }

    pub fn predict_input(&self, input: &WordInput) -> Result<f64> {
        self.require(Setup::Single)?;
        Ok(self.predict_batch(&[vec![input.clone()]])?[0])
    }

    /// Probability that `sentence` is funny.
    pub fn predict_single(&self, sentence: &str) -> Result<f64> {
        self.predict_input(&WordInput::new(sentence))
    }

    /// Probability that `first` is the funny one of the pair. The head sees
    /// `[E(first), E(second)]`, so swapping the arguments is not guaranteed
    /// to give the complementary probability.
    pub fn predict_pair(&self, first: &str, second: &str) -> Result<f64> {
        self.require(Setup::Paired)?;
        Ok(self.predict_batch(&[vec![WordInput::new(first), WordInput::new(second)]])?[0])
    }

    fn require(&self, setup: Setup) -> Result<()> {
        if self.config.setup != setup {
            return Err(Error::Config(format!(
                "{} is not a {setup:?} model",
                self.config.label()
            )));
        }
        Ok(())
    }

    /// Current values of every checkpointed tensor: the head, plus the
    /// encoder when it is trainable.
    pub fn state(&self) -> Result<HashMap<String, Tensor>> {
        let mut out = self.head.params.snapshot()?;
        if !self.config.frozen {
            if let Some(p) = self.encoder.params() {
                for (k, v) in p.snapshot()? {
                    out.insert(format!("encoder.{k}"), v);
                }
            }
        }
        Ok(out)
    }

    /// Restores values captured by [`state`](Self::state).
    pub fn restore(&self, state: &HashMap<String, Tensor>) -> Result<()> {
        let mut head = HashMap::new();
        let mut enc = HashMap::new();
        for (k, v) in state {
            match k.strip_prefix("encoder.") {
                Some(rest) => enc.insert(rest.to_string(), v.clone()),
                None => head.insert(k.clone(), v.clone()),
            };
        }
        self.head.params.assign(&head)?;
        if !enc.is_empty() {
            let p = self
                .encoder
                .params()
                .ok_or_else(|| Error::Config("checkpoint has encoder weights".into()))?;
            p.assign(&enc)?;
        }
        Ok(())
    }

    /// Writes a safetensors checkpoint. The variant configuration, seed and
    /// encoder checksum travel in the file's metadata block.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let state = self.state()?;
        let mut names: Vec<&String> = state.keys().collect();
        names.sort();
        let mut buffers = Vec::with_capacity(names.len());
        for name in &names {
            let t = &state[*name];
            let values = t.flatten_all()?.to_vec1::<f32>()?;
            let bytes: Vec<u8> = values.iter().flat_map(|x| x.to_le_bytes()).collect();
            buffers.push((name.to_string(), t.dims().to_vec(), bytes));
        }
        let views = buffers
            .iter()
            .map(|(n, shape, bytes)| {
                safetensors::tensor::TensorView::new(safetensors::Dtype::F32, shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::SafeTensors(e.to_string()))?;
        let metadata = HashMap::from([
            ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
            ("variant".to_string(), serde_json::to_string(&self.config)?),
            ("trained".to_string(), self.trained.to_string()),
            ("encoder_checksum".to_string(), self.encoder_checksum()?),
        ]);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        safetensors::serialize_to_file(views, Some(metadata), path)
            .map_err(|e| Error::SafeTensors(e.to_string()))
    }

    pub fn read_checkpoint_config(path: &Path) -> Result<(VariantConfig, HashMap<String, String>)> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::SafeTensors(e.to_string()))?;
        let meta = meta.metadata().clone().unwrap_or_default();
        if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::SafeTensors(format!(
                "{} is not a classifier checkpoint",
                path.display()
            )));
        }
        let config: VariantConfig = serde_json::from_str(
            meta.get("variant")
                .ok_or_else(|| Error::SafeTensors("checkpoint lacks variant metadata".into()))?,
        )?;
        Ok((config, meta))
    }

    pub fn load_checkpoint(path: &Path, cache: &ModelCache) -> Result<Self> {
        let (config, meta) = Self::read_checkpoint_config(path)?;
        let mut variant = Self::build(config, cache)?;
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        variant.restore(&tensors)?;
        variant.trained = meta.get("trained").map(String::as_str) == Some("true");
        Ok(variant)
    }
}
