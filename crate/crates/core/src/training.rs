//! Classifier training with binary cross-entropy, seeded shuffling and
//! best-validation-accuracy checkpoint selection.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_instances, Corpus, Split};
use crate::models::nn::bce_with_logits;
use crate::models::{ModelVariant, WordInput};
use crate::{Error, Result};

/// Learning rate used when the encoder is finetuned.
pub const FINETUNE_LR: f64 = 2e-5;
/// Learning rate used when only the head is fitted.
pub const HEAD_ONLY_LR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults(frozen: bool) -> Self {
        TrainConfig {
            learning_rate: if frozen { HEAD_ONLY_LR } else { FINETUNE_LR },
            batch_size: 32,
            max_epochs: 10,
            early_stop_patience: 3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Partially specified configuration; later layers override earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub seed: Option<u64>,
}

impl TrainOverrides {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = TrainOverrides::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| Error::Config(format!("line {}: {key}: {e}", n + 1));
            match key {
                "learning_rate" | "lr" => out.learning_rate = Some(value.parse().map_err(|e| bad(&e))?),
                "batch_size" => out.batch_size = Some(value.parse().map_err(|e| bad(&e))?),
                "max_epochs" | "epochs" => out.max_epochs = Some(value.parse().map_err(|e| bad(&e))?),
                "early_stop_patience" | "patience" => {
                    out.early_stop_patience = Some(value.parse().map_err(|e| bad(&e))?)
                }
                "seed" => out.seed = Some(value.parse().map_err(|e| bad(&e))?),
                _ => return Err(Error::Config(format!("line {}: unknown key {key}", n + 1))),
            }
        }
        Ok(out)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `self` wins over `lower` wherever both are set.
    pub fn or(self, lower: TrainOverrides) -> TrainOverrides {
        TrainOverrides {
            learning_rate: self.learning_rate.or(lower.learning_rate),
            batch_size: self.batch_size.or(lower.batch_size),
            max_epochs: self.max_epochs.or(lower.max_epochs),
            early_stop_patience: self.early_stop_patience.or(lower.early_stop_patience),
            seed: self.seed.or(lower.seed),
        }
    }

    pub fn resolve(&self, frozen: bool) -> TrainConfig {
        let d = TrainConfig::defaults(frozen);
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            early_stop_patience: self.early_stop_patience.unwrap_or(d.early_stop_patience),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub train_instances: usize,
    pub val_instances: usize,
    /// Loss of the first batch, before any update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

struct Prepared {
    inputs: Vec<Vec<WordInput>>,
    labels: Vec<bool>,
}

fn prepare(corpus: &Corpus, variant: &ModelVariant, seed: u64, what: &str) -> Result<Prepared> {
    let instances = make_instances(corpus, variant.config.setup, seed);
    if instances.is_empty() {
        return Err(Error::EmptyInput(format!("{what} split")));
    }
    Ok(Prepared {
        inputs: instances
            .iter()
            .map(|i| i.texts.iter().map(|t| WordInput::new(t)).collect())
            .collect(),
        labels: instances.iter().map(|i| i.label).collect(),
    })
}

fn targets(labels: &[bool]) -> Result<Tensor> {
    let v: Vec<f32> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(v, labels.len(), &Device::Cpu)?)
}

/// Fraction of instances whose logit sign matches the label, for a
/// variant that may not be marked trained yet.
pub fn instance_accuracy(
    variant: &ModelVariant,
    inputs: &[Vec<WordInput>],
    labels: &[bool],
    batch_size: usize,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("instances".into()));
    }
    let mut correct = 0usize;
    for (chunk, gold) in inputs.chunks(batch_size).zip(labels.chunks(batch_size)) {
        let logits = variant.logits(chunk)?.to_vec1::<f32>()?;
        correct += logits.iter().zip(gold).filter(|(z, &g)| (**z > 0.0) == g).count();
    }
    Ok(correct as f64 / inputs.len() as f64)
}

/// Trains an untrained variant on the corpus' train split, selecting the
/// epoch with the best validation accuracy.
pub fn train(variant: &mut ModelVariant, corpus: &Corpus, config: &TrainConfig) -> Result<TrainLog> {
    if variant.is_trained() {
        return Err(Error::Config(format!(
            "{} is already trained; use continue_training",
            variant.config.label()
        )));
    }
    continue_training(variant, corpus, config)
}

/// Like [`train`] but accepts an already trained variant.
pub fn continue_training(
    variant: &mut ModelVariant,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    let train_set = prepare(&corpus.split(Split::Train), variant, config.seed, "train")?;
    let val_set = prepare(&corpus.split(Split::Val), variant, config.seed, "validation")?;
    let before = variant.config.frozen.then(|| variant.encoder_checksum()).transpose()?;

    let params = ParamsAdamW {
        lr: config.learning_rate,
        ..Default::default()
    };
    let mut opt = AdamW::new(variant.trainable_vars(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.inputs.len()).collect();

    let mut epochs = Vec::new();
    let mut initial_loss = None;
    let mut best: Option<(usize, f64, HashMap<String, Tensor>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Vec<WordInput>> = idx.iter().map(|&i| train_set.inputs[i].clone()).collect();
            let gold: Vec<bool> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let logits = variant.logits(&batch)?;
            let loss = bce_with_logits(&logits, &targets(&gold)?)?;
            let value = f64::from(loss.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b + 1, loss: value });
            }
            initial_loss.get_or_insert(value);
            opt.backward_step(&loss)?;
            loss_sum += value * idx.len() as f64;
        }
        let val_accuracy =
            instance_accuracy(variant, &val_set.inputs, &val_set.labels, config.batch_size)?;
        log::info!(
            "{} epoch {epoch}: train loss {:.4}, val accuracy {:.4}",
            variant.config.label(),
            loss_sum / order.len() as f64,
            val_accuracy
        );
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|b| val_accuracy > b.1) {
            best = Some((epoch, val_accuracy, variant.state()?));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_val_accuracy, state) = best.expect("at least one epoch");
    variant.restore(&state)?;
    variant.mark_trained();
    if let Some(before) = before {
        if variant.encoder_checksum()? != before {
            return Err(Error::Config("frozen encoder changed during training".into()));
        }
    }
    Ok(TrainLog {
        config: config.clone(),
        train_instances: train_set.inputs.len(),
        val_instances: val_set.inputs.len(),
        initial_loss: initial_loss.unwrap_or(f64::NAN),
        epochs,
        best_epoch,
        best_val_accuracy,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Setup, SentencePair};
    use crate::models::testing::TinyModels;
    use crate::models::{EncoderKind, VariantConfig};

    const FUNNY: &[(&str, &str)] = &[
        ("tiger woods announces return to sex", "tiger woods announces return to golf"),
        ("city opens new art jail", "city opens new art museum"),
        ("bp ready to resume oil spilling", "bp ready to resume oil drilling"),
        ("family takes rare trip to the mall", "family takes rare trip to home country"),
        ("dog finds god in local church", "dog finds job in local bank"),
        ("congress shocked by beer", "congress shocked by report"),
        ("man arrested for love of pizza", "man arrested for money of bank"),
        ("teacher declares war on students", "teacher declares peace on students"),
        ("president reports record sales of rain", "president reports record sales of car"),
        ("area cat wins school election", "area student wins school election"),
    ];

    fn corpus() -> Corpus {
        let mut pairs = Vec::new();
        for (split, tag) in [(Split::Train, "t"), (Split::Val, "v")] {
            for (i, (f, s)) in FUNNY.iter().enumerate() {
                pairs.push(SentencePair {
                    pair_id: format!("{tag}{i}"),
                    funny_text: f.to_string(),
                    serious_text: s.to_string(),
                    split,
                    quality_rating: None,
                    humor_type: None,
                    presentation_label: i % 2 == 0,
                });
            }
        }
        Corpus::new(pairs, Default::default()).unwrap()
    }

    fn variant(fx: &TinyModels, kind: EncoderKind, setup: Setup, frozen: bool) -> ModelVariant {
        let id = match kind {
            EncoderKind::BagOfVectors | EncoderKind::Recurrent => TinyModels::VECTORS,
            _ => TinyModels::MLM,
        };
        let config = VariantConfig {
            setup,
            encoder_kind: kind,
            encoder_id: id.into(),
            frozen,
            seed: 3,
            recurrent_hidden: Some(8),
        };
        ModelVariant::build(config, &fx.cache).unwrap()
    }

    fn quick(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            batch_size: 4,
            max_epochs: epochs,
            early_stop_patience: epochs,
            seed: 11,
        }
    }

    #[test]
    fn overrides_follow_precedence() {
        let file = TrainOverrides::parse("# run\nlr = 0.01\nbatch_size=8\nseed = 4\n").unwrap();
        let flags = TrainOverrides { seed: Some(9), ..Default::default() };
        let cfg = flags.or(file).resolve(false);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.max_epochs, 10);
        assert_eq!(TrainOverrides::default().resolve(true).learning_rate, HEAD_ONLY_LR);
        assert!(TrainOverrides::parse("epochs: 3").is_err());
        assert!(TrainOverrides::parse("colour = red").is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::defaults(true) }.validate().is_err());
    }

    #[test]
    fn zero_head_starts_at_ln2() {
        let fx = TinyModels::new();
        let mut v = variant(&fx, EncoderKind::BagOfVectors, Setup::Single, true);
        let log = train(&mut v, &corpus(), &quick(1e-3, 1)).unwrap();
        assert!((log.initial_loss - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn frozen_encoder_untouched() {
        let fx = TinyModels::new();
        let mut v = variant(&fx, EncoderKind::PretrainedMlm, Setup::Paired, true);
        let before = v.encoder_checksum().unwrap();
        train(&mut v, &corpus(), &quick(1e-2, 2)).unwrap();
        assert_eq!(v.encoder_checksum().unwrap(), before);
        assert!(v.is_trained());
        assert!(train(&mut v, &corpus(), &quick(1e-2, 1)).is_err());
    }

    #[test]
    fn finetuning_changes_encoder() {
        let fx = TinyModels::new();
        let mut v = variant(&fx, EncoderKind::PretrainedMlm, Setup::Single, false);
        let before = v.encoder_checksum().unwrap();
        train(&mut v, &corpus(), &quick(1e-3, 1)).unwrap();
        assert_ne!(v.encoder_checksum().unwrap(), before);
    }

    #[test]
    fn same_seed_same_log() {
        let fx = TinyModels::new();
        let run = || {
            let mut v = variant(&fx, EncoderKind::Recurrent, Setup::Single, false);
            let log = train(&mut v, &corpus(), &quick(1e-2, 3)).unwrap();
            (log, v.state().unwrap()["head.weight"].to_vec2::<f32>().unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn best_epoch_is_kept() {
        let fx = TinyModels::new();
        let mut v = variant(&fx, EncoderKind::Recurrent, Setup::Paired, false);
        let log = train(&mut v, &corpus(), &quick(5e-2, 6)).unwrap();
        let max = log.epochs.iter().map(|e| e.val_accuracy).fold(f64::MIN, f64::max);
        assert_eq!(log.best_val_accuracy, max);
        let set = prepare(&corpus().split(Split::Val), &v, 11, "val").unwrap();
        let acc = instance_accuracy(&v, &set.inputs, &set.labels, 4).unwrap();
        assert!((acc - max).abs() < 1e-12);
    }

    #[test]
    fn overfits_ten_pairs() {
        let fx = TinyModels::new();
        let mut v = variant(&fx, EncoderKind::Recurrent, Setup::Single, false);
        let cfg = TrainConfig { early_stop_patience: 200, ..quick(1e-2, 200) };
        let c = corpus();
        continue_training(&mut v, &c, &cfg).unwrap();
        let set = prepare(&c.split(Split::Train), &v, 11, "train").unwrap();
        assert_eq!(instance_accuracy(&v, &set.inputs, &set.labels, 4).unwrap(), 1.0);
    }

    #[test]
    fn empty_split_rejected() {
        let fx = TinyModels::new();
        let mut v = variant(&fx, EncoderKind::BagOfVectors, Setup::Single, true);
        let train_only = corpus().split(Split::Train);
        assert!(matches!(
            train(&mut v, &train_only, &quick(1e-3, 1)),
            Err(Error::EmptyInput(_))
        ));
    }
}
