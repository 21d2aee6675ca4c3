//! Bidirectional transformer encoder (BERT / DistilBERT / RoBERTa weight
//! layouts) that can return its post-softmax attention maps.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::nn::{layer_norm, linear, softmax_last};
use super::params::{Init, ParamStore};
use super::tokenizer::{SubwordLayout, TokenizerKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bert,
    DistilBert,
    Roberta,
}

impl Family {
    pub fn tokenizer_kind(self) -> TokenizerKind {
        match self {
            Family::Bert | Family::DistilBert => TokenizerKind::WordPiece,
            Family::Roberta => TokenizerKind::Roberta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub family: Family,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_positions: usize,
    pub type_vocab_size: usize,
    pub layer_norm_eps: f64,
    pub pad_token_id: usize,
}

impl TransformerConfig {
    /// Reads a Hugging Face style `config.json`.
    pub fn from_hf_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let get = |keys: &[&str]| -> Option<u64> {
            keys.iter().find_map(|k| v.get(*k).and_then(Value::as_u64))
        };
        let need = |keys: &[&str]| {
            get(keys)
                .map(|x| x as usize)
                .ok_or_else(|| Error::Config(format!("config.json lacks {}", keys[0])))
        };
        let model_type = v.get("model_type").and_then(Value::as_str).unwrap_or("bert");
        let family = match model_type {
            "bert" => Family::Bert,
            "distilbert" => Family::DistilBert,
            "roberta" => Family::Roberta,
            other => return Err(Error::Config(format!("unsupported model_type {other:?}"))),
        };
        let hidden_size = need(&["hidden_size", "dim"])?;
        Ok(TransformerConfig {
            family,
            vocab_size: need(&["vocab_size"])?,
            hidden_size,
            num_layers: need(&["num_hidden_layers", "n_layers"])?,
            num_heads: need(&["num_attention_heads", "n_heads"])?,
            intermediate_size: get(&["intermediate_size", "hidden_dim"])
                .map(|x| x as usize)
                .unwrap_or(4 * hidden_size),
            max_positions: need(&["max_position_embeddings"])?,
            type_vocab_size: match family {
                Family::DistilBert => 0,
                _ => get(&["type_vocab_size"]).unwrap_or(2) as usize,
            },
            layer_norm_eps: v
                .get("layer_norm_eps")
                .and_then(Value::as_f64)
                .unwrap_or(1e-12),
            pad_token_id: get(&["pad_token_id"]).unwrap_or(0) as usize,
        })
    }

    /// Inverse of [`from_hf_json`](Self::from_hf_json), in BERT/RoBERTa key names.
    pub fn to_hf_json(&self) -> Value {
        let model_type = match self.family {
            Family::Bert => "bert",
            Family::DistilBert => "distilbert",
            Family::Roberta => "roberta",
        };
        match self.family {
            Family::DistilBert => serde_json::json!({
                "model_type": model_type,
                "vocab_size": self.vocab_size,
                "dim": self.hidden_size,
                "n_layers": self.num_layers,
                "n_heads": self.num_heads,
                "hidden_dim": self.intermediate_size,
                "max_position_embeddings": self.max_positions,
                "pad_token_id": self.pad_token_id,
            }),
            _ => serde_json::json!({
                "model_type": model_type,
                "vocab_size": self.vocab_size,
                "hidden_size": self.hidden_size,
                "num_hidden_layers": self.num_layers,
                "num_attention_heads": self.num_heads,
                "intermediate_size": self.intermediate_size,
                "max_position_embeddings": self.max_positions,
                "type_vocab_size": self.type_vocab_size,
                "layer_norm_eps": self.layer_norm_eps,
                "pad_token_id": self.pad_token_id,
            }),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// RoBERTa numbers positions from `pad_token_id + 1`.
    fn position_offset(&self) -> usize {
        match self.family {
            Family::Roberta => self.pad_token_id + 1,
            _ => 0,
        }
    }

    /// Longest framed sequence the position table supports.
    pub fn max_sequence(&self) -> usize {
        self.max_positions - self.position_offset()
    }

    /// Every parameter in construction order: internal name, shape, init.
    fn parameter_specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        let d = self.hidden_size;
        let w = Init::Normal(0.02);
        let mut specs = vec![
            ("embeddings.word_embeddings.weight".into(), vec![self.vocab_size, d], w),
            ("embeddings.position_embeddings.weight".into(), vec![self.max_positions, d], w),
        ];
        if self.type_vocab_size > 0 {
            specs.push((
                "embeddings.token_type_embeddings.weight".into(),
                vec![self.type_vocab_size, d],
                w,
            ));
        }
        specs.push(("embeddings.LayerNorm.weight".into(), vec![d], Init::Ones));
        specs.push(("embeddings.LayerNorm.bias".into(), vec![d], Init::Zeros));
        for l in 0..self.num_layers {
            let p = format!("encoder.layer.{l}");
            for (name, out, inp) in [
                ("attention.self.query", d, d),
                ("attention.self.key", d, d),
                ("attention.self.value", d, d),
                ("attention.output.dense", d, d),
                ("intermediate.dense", self.intermediate_size, d),
                ("output.dense", d, self.intermediate_size),
            ] {
                specs.push((format!("{p}.{name}.weight"), vec![out, inp], w));
                specs.push((format!("{p}.{name}.bias"), vec![out], Init::Zeros));
                if name == "attention.output.dense" || name == "output.dense" {
                    let ln = name.replace("dense", "LayerNorm");
                    specs.push((format!("{p}.{ln}.weight"), vec![d], Init::Ones));
                    specs.push((format!("{p}.{ln}.bias"), vec![d], Init::Zeros));
                }
            }
        }
        specs
    }

    /// Names under which a checkpoint may store an internal parameter.
    fn checkpoint_names(&self, internal: &str) -> Vec<String> {
        let mut out = Vec::new();
        match self.family {
            Family::Bert | Family::Roberta => {
                let prefix = if self.family == Family::Bert { "bert." } else { "roberta." };
                let legacy = internal
                    .replace("LayerNorm.weight", "LayerNorm.gamma")
                    .replace("LayerNorm.bias", "LayerNorm.beta");
                for n in [internal.to_string(), legacy] {
                    out.push(n.clone());
                    out.push(format!("{prefix}{n}"));
                }
            }
            Family::DistilBert => {
                let mut n = internal
                    .replace("encoder.layer.", "transformer.layer.")
                    .replace("attention.self.query", "attention.q_lin")
                    .replace("attention.self.key", "attention.k_lin")
                    .replace("attention.self.value", "attention.v_lin")
                    .replace("attention.output.dense", "attention.out_lin")
                    .replace("attention.output.LayerNorm", "sa_layer_norm")
                    .replace("intermediate.dense", "ffn.lin1")
                    .replace("output.LayerNorm", "output_layer_norm");
                n = n.replace(".output.dense", ".ffn.lin2");
                out.push(n.clone());
                out.push(format!("distilbert.{n}"));
            }
        }
        out
    }
}

struct Layer {
    query: (Tensor, Tensor),
    key: (Tensor, Tensor),
    value: (Tensor, Tensor),
    attn_out: (Tensor, Tensor),
    attn_ln: (Tensor, Tensor),
    ffn_in: (Tensor, Tensor),
    ffn_out: (Tensor, Tensor),
    out_ln: (Tensor, Tensor),
}

pub struct TransformerEncoder {
    config: TransformerConfig,
    params: ParamStore,
    word_emb: Tensor,
    pos_emb: Tensor,
    type_emb: Option<Tensor>,
    emb_ln: (Tensor, Tensor),
    layers: Vec<Layer>,
}

impl std::fmt::Debug for TransformerEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformerEncoder")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Hidden states of the last layer plus, on request, one `[B, H, T, T]`
/// attention tensor per layer.
pub struct EncoderOutput {
    pub hidden: Tensor,
    pub attentions: Vec<Tensor>,
}

impl TransformerEncoder {
    /// Randomly initialised encoder (the "vanilla" architecture baseline).
    pub fn random(config: TransformerConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(seed))
    }

    /// Encoder with weights from a safetensors checkpoint.
    pub fn from_checkpoint(config: TransformerConfig, weights: &Path) -> Result<Self> {
        let tensors = super::params::load_safetensors(weights)?;
        let mut mapped = HashMap::new();
        let mut missing = Vec::new();
        for (name, shape, _) in config.parameter_specs() {
            match config
                .checkpoint_names(&name)
                .iter()
                .find_map(|c| tensors.get(c))
            {
                Some(t) if t.dims() == shape.as_slice() => {
                    mapped.insert(name, t.clone());
                }
                Some(t) => {
                    return Err(Error::Config(format!(
                        "{name}: checkpoint shape {:?}, config expects {shape:?}",
                        t.dims()
                    )))
                }
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "{} missing in {}: {}",
                missing.len(),
                weights.display(),
                missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        let mut params = ParamStore::new(0);
        params.preload(mapped)?;
        Self::build(config, params)
    }

    fn build(config: TransformerConfig, mut params: ParamStore) -> Result<Self> {
        if config.hidden_size % config.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                config.hidden_size, config.num_heads
            )));
        }
        let mut tensors = HashMap::new();
        for (name, shape, init) in config.parameter_specs() {
            let t = params.get(&name, &shape, init)?;
            tensors.insert(name, t);
        }
        let mut take = |n: &str| tensors.remove(n).expect("declared parameter");
        let word_emb = take("embeddings.word_embeddings.weight");
        let pos_emb = take("embeddings.position_embeddings.weight");
        let type_emb = (config.type_vocab_size > 0)
            .then(|| take("embeddings.token_type_embeddings.weight"));
        let emb_ln = (take("embeddings.LayerNorm.weight"), take("embeddings.LayerNorm.bias"));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let mut pair = |n: &str| {
                let p = format!("encoder.layer.{l}.{n}");
                (take(&format!("{p}.weight")), take(&format!("{p}.bias")))
            };
            layers.push(Layer {
                query: pair("attention.self.query"),
                key: pair("attention.self.key"),
                value: pair("attention.self.value"),
                attn_out: pair("attention.output.dense"),
                attn_ln: pair("attention.output.LayerNorm"),
                ffn_in: pair("intermediate.dense"),
                ffn_out: pair("output.dense"),
                out_ln: pair("output.LayerNorm"),
            });
        }
        Ok(TransformerEncoder {
            config,
            params,
            word_emb,
            pos_emb,
            type_emb,
            emb_ln,
            layers,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.config.hidden_size
    }

    /// Writes the weights under BERT-layout names plus a `config.json`,
    /// producing a directory this type can load back.
    pub fn save_pretrained(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let snapshot = self.params.snapshot()?;
        let named: HashMap<String, Tensor> = snapshot
            .into_iter()
            .map(|(k, v)| (self.config.checkpoint_names(&k).remove(0), v))
            .collect();
        candle_core::safetensors::save(&named, dir.join("model.safetensors"))?;
        let cfg = serde_json::to_string_pretty(&self.config.to_hf_json())?;
        let path = dir.join("config.json");
        std::fs::write(&path, cfg).map_err(|e| Error::io(path, e))
    }

    /// Runs a padded batch. Attention maps are returned only when
    /// `with_attention` is set.
    pub fn forward(&self, batch: &[SubwordLayout], with_attention: bool) -> Result<EncoderOutput> {
        let dev = Device::Cpu;
        let b = batch.len();
        let t = batch.iter().map(SubwordLayout::len).max().unwrap_or(0);
        if b == 0 || t == 0 {
            return Err(Error::EmptyInput("transformer batch".into()));
        }
        if t > self.config.max_sequence() {
            return Err(Error::Unsupported(format!(
                "sequence of {t} tokens exceeds {} positions",
                self.config.max_sequence()
            )));
        }
        let pad = self.config.pad_token_id as u32;
        let mut ids = Vec::with_capacity(b * t);
        let mut mask = Vec::with_capacity(b * t);
        for layout in batch {
            ids.extend(layout.ids.iter().copied());
            ids.extend(std::iter::repeat_n(pad, t - layout.len()));
            mask.extend(std::iter::repeat_n(0f32, layout.len()));
            mask.extend(std::iter::repeat_n(-1e9f32, t - layout.len()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Config(format!("token id {bad} outside vocabulary")));
        }
        let ids = Tensor::from_vec(ids, b * t, &dev)?;
        let mask = Tensor::from_vec(mask, (b, 1, 1, t), &dev)?;

        let d = self.config.hidden_size;
        let offset = self.config.position_offset() as u32;
        let positions = Tensor::arange(offset, offset + t as u32, &dev)?;
        let mut x = self
            .word_emb
            .index_select(&ids, 0)?
            .reshape((b, t, d))?
            .broadcast_add(&self.pos_emb.index_select(&positions, 0)?.unsqueeze(0)?)?;
        if let Some(te) = &self.type_emb {
            x = x.broadcast_add(&te.narrow(0, 0, 1)?)?;
        }
        let eps = self.config.layer_norm_eps;
        x = layer_norm(&x, &self.emb_ln.0, &self.emb_ln.1, eps)?;

        let h = self.config.num_heads;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut attentions = Vec::new();
        for layer in &self.layers {
            let split = |y: Tensor| -> Result<Tensor> {
                Ok(y.reshape((b, t, h, hd))?.transpose(1, 2)?.contiguous()?)
            };
            let q = split(linear(&x, &layer.query.0, Some(&layer.query.1))?)?;
            let k = split(linear(&x, &layer.key.0, Some(&layer.key.1))?)?;
            let v = split(linear(&x, &layer.value.0, Some(&layer.value.1))?)?;
            let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(&mask)?;
            let probs = softmax_last(&scores)?;
            let ctx = probs
                .matmul(&v)?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b, t, d))?;
            if with_attention {
                attentions.push(probs.detach());
            }
            let attn = linear(&ctx, &layer.attn_out.0, Some(&layer.attn_out.1))?;
            x = layer_norm(&(x + attn)?, &layer.attn_ln.0, &layer.attn_ln.1, eps)?;
            let ff = linear(&x, &layer.ffn_in.0, Some(&layer.ffn_in.1))?.gelu_erf()?;
            let ff = linear(&ff, &layer.ffn_out.0, Some(&layer.ffn_out.1))?;
            x = layer_norm(&(x + ff)?, &layer.out_ln.0, &layer.out_ln.1, eps)?;
        }
        Ok(EncoderOutput {
            hidden: x,
            attentions,
        })
    }

    /// First-position (`[CLS]` / `<s>`) final-layer state, `[B, hidden]`.
    pub fn pooled(&self, batch: &[SubwordLayout]) -> Result<Tensor> {
        let out = self.forward(batch, false)?;
        Ok(out.hidden.narrow(1, 0, 1)?.squeeze(1)?)
    }

    /// Attention of one unpadded sequence as `[L][H][T][T]` f32 values.
    pub fn attention_maps(&self, layout: &SubwordLayout) -> Result<Vec<Vec<Vec<Vec<f32>>>>> {
        let out = self.forward(std::slice::from_ref(layout), true)?;
        out.attentions
            .iter()
            .map(|a| Ok(a.squeeze(0)?.to_dtype(DType::F32)?.to_vec3::<f32>()?))
            .collect()
    }
}
