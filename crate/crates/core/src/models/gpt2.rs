//! GPT-2 style causal language model used for sentence likelihoods.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor, D};
use serde::{Deserialize, Serialize};

use super::nn::{conv1d, layer_norm, softmax_last};
use super::params::{Init, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gpt2Config {
    pub vocab_size: usize,
    pub n_positions: usize,
    pub n_embd: usize,
    pub n_layer: usize,
    pub n_head: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_epsilon: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl Gpt2Config {
    pub fn from_hf_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn parameter_specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        let d = self.n_embd;
        let w = Init::Normal(0.02);
        let mut specs = vec![
            ("wte.weight".to_string(), vec![self.vocab_size, d], w),
            ("wpe.weight".to_string(), vec![self.n_positions, d], w),
        ];
        for l in 0..self.n_layer {
            let p = format!("h.{l}");
            specs.push((format!("{p}.ln_1.weight"), vec![d], Init::Ones));
            specs.push((format!("{p}.ln_1.bias"), vec![d], Init::Zeros));
            specs.push((format!("{p}.attn.c_attn.weight"), vec![d, 3 * d], w));
            specs.push((format!("{p}.attn.c_attn.bias"), vec![3 * d], Init::Zeros));
            specs.push((format!("{p}.attn.c_proj.weight"), vec![d, d], w));
            specs.push((format!("{p}.attn.c_proj.bias"), vec![d], Init::Zeros));
            specs.push((format!("{p}.ln_2.weight"), vec![d], Init::Ones));
            specs.push((format!("{p}.ln_2.bias"), vec![d], Init::Zeros));
            specs.push((format!("{p}.mlp.c_fc.weight"), vec![d, 4 * d], w));
            specs.push((format!("{p}.mlp.c_fc.bias"), vec![4 * d], Init::Zeros));
            specs.push((format!("{p}.mlp.c_proj.weight"), vec![4 * d, d], w));
            specs.push((format!("{p}.mlp.c_proj.bias"), vec![d], Init::Zeros));
        }
        specs.push(("ln_f.weight".to_string(), vec![d], Init::Ones));
        specs.push(("ln_f.bias".to_string(), vec![d], Init::Zeros));
        specs
    }
}

struct Block {
    ln_1: (Tensor, Tensor),
    c_attn: (Tensor, Tensor),
    c_proj: (Tensor, Tensor),
    ln_2: (Tensor, Tensor),
    c_fc: (Tensor, Tensor),
    mlp_proj: (Tensor, Tensor),
}

pub struct Gpt2 {
    config: Gpt2Config,
    params: ParamStore,
    wte: Tensor,
    wpe: Tensor,
    blocks: Vec<Block>,
    ln_f: (Tensor, Tensor),
}

impl std::fmt::Debug for Gpt2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gpt2").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gpt2 {
    pub fn random(config: Gpt2Config, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(seed))
    }

    pub fn from_checkpoint(config: Gpt2Config, weights: &Path) -> Result<Self> {
        let tensors = super::params::load_safetensors(weights)?;
        let mut mapped = HashMap::new();
        for (name, shape, _) in config.parameter_specs() {
            let t = tensors
                .get(&name)
                .or_else(|| tensors.get(&format!("transformer.{name}")))
                .ok_or_else(|| Error::Config(format!("{name} missing in {}", weights.display())))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "{name}: checkpoint shape {:?}, config expects {shape:?}",
                    t.dims()
                )));
            }
            mapped.insert(name, t.clone());
        }
        let mut params = ParamStore::new(0);
        params.preload(mapped)?;
        Self::build(config, params)
    }

    fn build(config: Gpt2Config, mut params: ParamStore) -> Result<Self> {
        if config.n_embd % config.n_head != 0 {
            return Err(Error::Config("n_embd not divisible by n_head".into()));
        }
        let mut tensors = HashMap::new();
        for (name, shape, init) in config.parameter_specs() {
            let t = params.get(&name, &shape, init)?;
            tensors.insert(name, t);
        }
        let mut take = |n: &str| tensors.remove(n).expect("declared parameter");
        let wte = take("wte.weight");
        let wpe = take("wpe.weight");
        let mut blocks = Vec::new();
        for l in 0..config.n_layer {
            let mut pair = |n: &str| {
                (
                    take(&format!("h.{l}.{n}.weight")),
                    take(&format!("h.{l}.{n}.bias")),
                )
            };
            blocks.push(Block {
                ln_1: pair("ln_1"),
                c_attn: pair("attn.c_attn"),
                c_proj: pair("attn.c_proj"),
                ln_2: pair("ln_2"),
                c_fc: pair("mlp.c_fc"),
                mlp_proj: pair("mlp.c_proj"),
            });
        }
        let ln_f = (take("ln_f.weight"), take("ln_f.bias"));
        Ok(Gpt2 {
            config,
            params,
            wte,
            wpe,
            blocks,
            ln_f,
        })
    }

    pub fn config(&self) -> &Gpt2Config {
        &self.config
    }

    pub fn save_pretrained(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        candle_core::safetensors::save(&self.params.snapshot()?, dir.join("model.safetensors"))?;
        let path = dir.join("config.json");
        let mut cfg = serde_json::to_value(&self.config)?;
        cfg["model_type"] = "gpt2".into();
        std::fs::write(&path, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(path, e))
    }

    /// Next-token logits for every position of one sequence, `[T, V]`.
    pub fn logits(&self, ids: &[u32]) -> Result<Tensor> {
        let dev = Device::Cpu;
        let t = ids.len();
        if t == 0 {
            return Err(Error::EmptySentence);
        }
        if t > self.config.n_positions {
            return Err(Error::Unsupported(format!(
                "{t} tokens exceed {} positions",
                self.config.n_positions
            )));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Config(format!("token id {bad} outside vocabulary")));
        }
        let d = self.config.n_embd;
        let h = self.config.n_head;
        let hd = d / h;
        let eps = self.config.layer_norm_epsilon;
        let idx = Tensor::from_vec(ids.to_vec(), t, &dev)?;
        let pos = Tensor::arange(0u32, t as u32, &dev)?;
        let mut x = (self.wte.index_select(&idx, 0)? + self.wpe.index_select(&pos, 0)?)?;
        let causal: Vec<f32> = (0..t)
            .flat_map(|i| (0..t).map(move |j| if j <= i { 0.0 } else { -1e9 }))
            .collect();
        let causal = Tensor::from_vec(causal, (1, t, t), &dev)?;
        let scale = 1.0 / (hd as f64).sqrt();
        for block in &self.blocks {
            let a = layer_norm(&x, &block.ln_1.0, &block.ln_1.1, eps)?;
            let qkv = conv1d(&a, &block.c_attn.0, &block.c_attn.1)?;
            let heads = |i: usize| -> Result<Tensor> {
                Ok(qkv
                    .narrow(1, i * d, d)?
                    .reshape((t, h, hd))?
                    .transpose(0, 1)?
                    .contiguous()?)
            };
            let (q, k, v) = (heads(0)?, heads(1)?, heads(2)?);
            let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(&causal)?;
            let ctx = softmax_last(&scores)?
                .matmul(&v)?
                .transpose(0, 1)?
                .contiguous()?
                .reshape((t, d))?;
            x = (x + conv1d(&ctx, &block.c_proj.0, &block.c_proj.1)?)?;
            let m = layer_norm(&x, &block.ln_2.0, &block.ln_2.1, eps)?;
            let m = conv1d(&m, &block.c_fc.0, &block.c_fc.1)?.gelu()?;
            x = (x + conv1d(&m, &block.mlp_proj.0, &block.mlp_proj.1)?)?;
        }
        let x = layer_norm(&x, &self.ln_f.0, &self.ln_f.1, eps)?;
        Ok(x.matmul(&self.wte.t()?)?)
    }

    /// Log-probability of each token given its prefix: entry `i` scores
    /// `ids[i + 1]`, so the result has `ids.len() - 1` entries.
    pub fn token_logprobs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        let logits = self.logits(ids)?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?.to_vec2::<f32>()?;
        Ok(ids
            .windows(2)
            .enumerate()
            .map(|(i, w)| logp[i][w[1] as usize] as f64)
            .collect())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_config(vocab_size: usize) -> Gpt2Config {
        Gpt2Config {
            vocab_size,
            n_positions: 32,
            n_embd: 16,
            n_layer: 2,
            n_head: 2,
            layer_norm_epsilon: 1e-5,
        }
    }

    #[test]
    fn causal_prefix_logits_match() {
        let lm = Gpt2::random(tiny_config(12), 5).unwrap();
        let full = lm.logits(&[1, 4, 7, 2]).unwrap().to_vec2::<f32>().unwrap();
        let prefix = lm.logits(&[1, 4]).unwrap().to_vec2::<f32>().unwrap();
        for (a, b) in full[1].iter().zip(&prefix[1]) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn logprobs_nonpositive() {
        let lm = Gpt2::random(tiny_config(12), 5).unwrap();
        let lp = lm.token_logprobs(&[1, 4, 7, 2]).unwrap();
        assert_eq!(lp.len(), 3);
        assert!(lp.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn roundtrip_weights() {
        let lm = Gpt2::random(tiny_config(12), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        lm.save_pretrained(dir.path()).unwrap();
        let cfg =
            Gpt2Config::from_hf_json(&std::fs::read_to_string(dir.path().join("config.json")).unwrap())
                .unwrap();
        let back = Gpt2::from_checkpoint(cfg, &dir.path().join("model.safetensors")).unwrap();
        assert_eq!(
            back.params.checksum().unwrap(),
            lm.params.checksum().unwrap()
        );
    }
}
