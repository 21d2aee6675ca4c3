//! Attention tensors and the statistics computed over them.

mod io;
mod localize;
mod stats;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::models::{ModelVariant, WordInput};
use crate::{Error, Result};

pub use io::{read_attention, write_attention};
pub use localize::{
    localization_baselines, localize_edit, random_replacement_activation, BaselineHits,
    LexiconTagger, Localization, LocalizationReport, localization_report, PosTag, PosTagger, ReplacementReport,
};
pub use stats::{
    chunk_attention_maps, funny_serious_distance, layer_distance, model_head_distance,
    sentence_distance, special_position_attention, ChunkMaps, FunnySeriousReport, SpecialTotals,
};

/// Tolerance on query-row sums.
pub const ROW_SUM_TOLERANCE: f32 = 1e-5;

/// Post-softmax attention of one sentence: `L × H × n × n`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    pub sentence_id: String,
    layers: usize,
    heads: usize,
    seq_len: usize,
    weights: Vec<f32>,
}

impl AttentionTensor {
    /// Validates shape and that every query row is a distribution.
    pub fn new(sentence_id: impl Into<String>, layers: usize, heads: usize, seq_len: usize, weights: Vec<f32>) -> Result<Self> {
        if layers == 0 || heads == 0 || seq_len == 0 {
            return Err(Error::BadAttentionFile("empty attention shape".into()));
        }
        if weights.len() != layers * heads * seq_len * seq_len {
            return Err(Error::BadAttentionFile(format!(
                "expected {layers}x{heads}x{seq_len}x{seq_len} weights, got {}",
                weights.len()
            )));
        }
        for (r, row) in weights.chunks(seq_len).enumerate() {
            let sum: f32 = row.iter().sum();
            if row.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidDistribution(format!("attention row {r} sums to {sum}")));
            }
        }
        Ok(AttentionTensor { sentence_id: sentence_id.into(), layers, heads, seq_len, weights })
    }

    /// Builds a tensor from nested `[L][H][n][n]` maps.
    pub fn from_maps(sentence_id: impl Into<String>, maps: Vec<Vec<Vec<Vec<f32>>>>) -> Result<Self> {
        let layers = maps.len();
        let heads = maps.first().map_or(0, Vec::len);
        let seq_len = maps.first().and_then(|l| l.first()).map_or(0, Vec::len);
        let weights = maps.into_iter().flatten().flatten().flatten().collect();
        Self::new(sentence_id, layers, heads, seq_len, weights)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    fn offset(&self, head: HeadId) -> usize {
        ((head.layer - 1) * self.heads + head.head - 1) * self.seq_len * self.seq_len
    }

    /// The `n × n` block of one head.
    pub fn head(&self, head: HeadId) -> &[f32] {
        let o = self.offset(head);
        &self.weights[o..o + self.seq_len * self.seq_len]
    }

    pub fn row(&self, head: HeadId, query: usize) -> &[f32] {
        let n = self.seq_len;
        &self.head(head)[query * n..(query + 1) * n]
    }

    /// Attention received by every key position, summed over query rows.
    pub fn received(&self, head: HeadId) -> Vec<f64> {
        let n = self.seq_len;
        let mut out = vec![0.0; n];
        for row in self.head(head).chunks(n) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += f64::from(*w);
            }
        }
        out
    }

    pub fn head_ids(&self) -> impl Iterator<Item = HeadId> + '_ {
        HeadId::all(self.layers, self.heads)
    }
}

/// 1-based `(layer, head)` index, written `layer-head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }

    pub fn check(self, layers: usize, heads: usize) -> Result<Self> {
        if (1..=layers).contains(&self.layer) && (1..=heads).contains(&self.head) {
            Ok(self)
        } else {
            Err(Error::InvalidHead(format!("{self} outside {layers}x{heads}")))
        }
    }

    pub fn all(layers: usize, heads: usize) -> impl Iterator<Item = HeadId> {
        (1..=layers).flat_map(move |l| (1..=heads).map(move |h| HeadId::new(l, h)))
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidHead(format!("expected LAYER-HEAD, got {s:?}"));
        let (l, h) = s.trim().split_once('-').ok_or_else(bad)?;
        let layer: usize = l.parse().map_err(|_| bad())?;
        let head: usize = h.parse().map_err(|_| bad())?;
        if layer == 0 || head == 0 {
            return Err(bad());
        }
        Ok(HeadId { layer, head })
    }
}

/// One value per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMatrix {
    pub layers: usize,
    pub heads: usize,
    /// Row-major by layer.
    pub values: Vec<f64>,
}

impl HeadMatrix {
    pub fn zeros(layers: usize, heads: usize) -> Self {
        HeadMatrix { layers, heads, values: vec![0.0; layers * heads] }
    }

    pub fn get(&self, head: HeadId) -> f64 {
        self.values[(head.layer - 1) * self.heads + head.head - 1]
    }

    pub fn get_mut(&mut self, head: HeadId) -> &mut f64 {
        &mut self.values[(head.layer - 1) * self.heads + head.head - 1]
    }

    /// Head with the largest value; the first one on ties.
    pub fn argmax(&self) -> HeadId {
        let i = self
            .values
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > self.values[best] { i } else { best });
        HeadId::new(i / self.heads + 1, i % self.heads + 1)
    }

    pub fn scale(&mut self, by: f64) {
        self.values.iter_mut().for_each(|v| *v *= by);
    }

    /// `(layer, head, value)` triples with 1-based indices.
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        HeadId::all(self.layers, self.heads).map(|h| (h.layer, h.head, self.get(h))).collect()
    }
}

/// Positions of each word inside an attention tensor. Position 0 and the
/// last position hold the sequence delimiters and belong to no word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordChunkMap {
    pub seq_len: usize,
    pub words: Vec<Range<usize>>,
}

impl SubwordChunkMap {
    pub fn new(seq_len: usize, words: Vec<Range<usize>>) -> Result<Self> {
        let mut expect = 1;
        for w in &words {
            if w.start != expect || w.is_empty() {
                return Err(Error::Config(format!("word positions {w:?} do not tile the sequence")));
            }
            expect = w.end;
        }
        if expect + 1 != seq_len {
            return Err(Error::Config(format!("words cover {} positions of {seq_len}", expect - 1)));
        }
        Ok(SubwordChunkMap { seq_len, words })
    }

    /// Positions of a word span.
    pub fn positions(&self, span: Range<usize>) -> Range<usize> {
        if span.is_empty() {
            return 0..0;
        }
        self.words[span.start].start..self.words[span.end - 1].end
    }

    /// Non-special positions outside `span`.
    pub fn others(&self, span: Range<usize>) -> Vec<usize> {
        let inside = self.positions(span);
        (1..self.seq_len - 1).filter(|p| !inside.contains(p)).collect()
    }

    pub fn word_totals(&self, received: &[f64]) -> Vec<f64> {
        self.words.iter().map(|r| r.clone().map(|p| received[p]).sum()).collect()
    }
}

/// Anything that yields attention tensors for word sequences.
pub trait AttentionSource {
    fn attention(&self, sentence_id: &str, words: &[String]) -> Result<(AttentionTensor, SubwordChunkMap)>;

    /// Token ids backing the tensor, used to check that two sources
    /// tokenize alike.
    fn token_ids(&self, words: &[String]) -> Result<Vec<u32>>;
}

impl AttentionSource for ModelVariant {
    fn attention(&self, sentence_id: &str, words: &[String]) -> Result<(AttentionTensor, SubwordChunkMap)> {
        let (model, _) = self.transformer()?;
        let layout = self.layout(&WordInput::from_words(words.to_vec()))?;
        let tensor = AttentionTensor::from_maps(sentence_id, model.attention_maps(&layout)?)?;
        let map = SubwordChunkMap::new(layout.len(), layout.words)?;
        Ok((tensor, map))
    }

    fn token_ids(&self, words: &[String]) -> Result<Vec<u32>> {
        Ok(self.layout(&WordInput::from_words(words.to_vec()))?.ids)
    }
}

/// Attention of one sentence under a variant.
pub fn extract_attention(source: &dyn AttentionSource, sentence_id: &str, sentence: &str) -> Result<(AttentionTensor, SubwordChunkMap)> {
    let words = crate::corpus::word_tokenize(sentence);
    if words.is_empty() {
        return Err(Error::EmptySentence);
    }
    source.attention(sentence_id, &words)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("sum {sum}")));
    }
    Ok(())
}

/// Base-2 Jensen–Shannon divergence, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(js_kernel(p.iter().copied(), q.iter().copied()))
}

pub(crate) fn js_kernel(p: impl Iterator<Item = f64>, q: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    for (a, b) in p.zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

pub(crate) fn js_rows(p: &[f32], q: &[f32]) -> f64 {
    js_kernel(p.iter().map(|&x| f64::from(x)), q.iter().map(|&x| f64::from(x)))
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::models::testing::TinyModels;
    use crate::models::{EncoderKind, VariantConfig};
    use proptest::prelude::*;

    #[test]
    fn head_id_parsing() {
        let h: HeadId = "10-6".parse().unwrap();
        assert_eq!(h, HeadId::new(10, 6));
        assert_eq!(h.to_string(), "10-6");
        assert!("0-3".parse::<HeadId>().is_err());
        assert!("10".parse::<HeadId>().is_err());
        assert!(h.check(12, 12).is_ok());
        assert!(h.check(6, 12).is_err());
    }

    #[test]
    fn js_known_values() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        // 0.5·KL(p‖m) + 0.5·KL(q‖m) by hand, m = (0.7, 0.3)
        let kl_p = 0.5 * (0.5f64 / 0.7).log2() + 0.5 * (0.5f64 / 0.3).log2();
        let kl_q = 0.9 * (0.9f64 / 0.7).log2() + 0.1 * (0.1f64 / 0.3).log2();
        let v = js_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((v - 0.5 * (kl_p + kl_q)).abs() < 1e-12);
        assert!(js_divergence(&[0.5, 0.5], &[1.0]).is_err());
        assert!(js_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    fn dist(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-9).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn js_properties((p, q) in (2usize..12).prop_flat_map(|n| (dist(n), dist(n)))) {
            let a = js_divergence(&p, &q).unwrap();
            let b = js_divergence(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn tensor_validation() {
        assert!(AttentionTensor::new("s", 1, 1, 2, vec![0.5, 0.5, 1.0, 0.0]).is_ok());
        assert!(AttentionTensor::new("s", 1, 1, 2, vec![0.5, 0.4, 1.0, 0.0]).is_err());
        assert!(AttentionTensor::new("s", 1, 1, 2, vec![0.5, 0.5, 1.0]).is_err());
        assert!(AttentionTensor::new("s", 1, 1, 2, vec![1.5, -0.5, 1.0, 0.0]).is_err());
    }

    #[test]
    fn received_conserves_mass() {
        let t = random_tensor("s", 2, 3, 6, 1);
        let total: f64 = t.head_ids().map(|h| t.received(h).iter().sum::<f64>()).sum();
        assert!((total - (2 * 3 * 6) as f64).abs() < 1e-4);
    }

    #[test]
    fn chunk_map_checks_tiling() {
        assert!(SubwordChunkMap::new(5, vec![1..2, 2..4]).is_ok());
        assert!(SubwordChunkMap::new(5, vec![1..2, 3..4]).is_err());
        assert!(SubwordChunkMap::new(6, vec![1..2, 2..4]).is_err());
        let m = SubwordChunkMap::new(6, vec![1..2, 2..4, 4..5]).unwrap();
        assert_eq!(m.positions(1..3), 2..5);
        assert_eq!(m.others(1..2), vec![1, 4]);
    }

    #[test]
    fn extraction_from_tiny_model() {
        let fx = TinyModels::new();
        let config = VariantConfig {
            setup: crate::corpus::Setup::Single,
            encoder_kind: EncoderKind::PretrainedMlm,
            encoder_id: TinyModels::MLM.into(),
            frozen: false,
            seed: 1,
            recurrent_hidden: None,
        };
        let v = ModelVariant::build(config, &fx.cache).unwrap();
        let (a, map) = extract_attention(&v, "s1", "tiger woods announces return to").unwrap();
        // every word is a whole vocabulary entry, so 5 words + 2 delimiters
        assert_eq!(a.seq_len(), 7);
        assert_eq!(map.words.len(), 5);
        for h in a.head_ids() {
            for q in 0..a.seq_len() {
                let s: f32 = a.row(h, q).iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
        let (b, _) = extract_attention(&v, "s1", "tiger woods announces return to").unwrap();
        assert_eq!(a.weights(), b.weights());
        let bag = VariantConfig {
            encoder_kind: EncoderKind::BagOfVectors,
            encoder_id: TinyModels::VECTORS.into(),
            ..v.config.clone()
        };
        let bag = ModelVariant::build(bag, &fx.cache).unwrap();
        assert!(matches!(extract_attention(&bag, "s", "tiger woods"), Err(Error::Unsupported(_))));
    }
}
