//! Divergence, special-position and chunk statistics.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{js_rows, AttentionSource, AttentionTensor, HeadMatrix, SubwordChunkMap};
use crate::corpus::TokenAlignment;
use crate::{Error, Result};

/// Per-head mean JS divergence between corresponding query rows of two
/// tensors of the same shape.
pub fn sentence_distance(a: &AttentionTensor, b: &AttentionTensor) -> Result<HeadMatrix> {
    if (a.layers(), a.heads(), a.seq_len()) != (b.layers(), b.heads(), b.seq_len()) {
        return Err(Error::LengthMismatch { left: a.weights().len(), right: b.weights().len() });
    }
    let mut out = HeadMatrix::zeros(a.layers(), a.heads());
    let n = a.seq_len();
    for h in a.head_ids() {
        let total: f64 = (0..n).map(|q| js_rows(a.row(h, q), b.row(h, q))).sum();
        *out.get_mut(h) = total / n as f64;
    }
    Ok(out)
}

fn accumulate(sum: &mut Option<HeadMatrix>, m: &HeadMatrix) {
    match sum {
        Some(s) => s.values.iter_mut().zip(&m.values).for_each(|(a, b)| *a += b),
        None => *sum = Some(m.clone()),
    }
}

/// Mean over sentences of the per-head distance between two models'
/// attention on the same sentence. Both models must tokenize alike.
pub fn model_head_distance(
    a: &dyn AttentionSource,
    b: &dyn AttentionSource,
    sentences: &[(String, Vec<String>)],
) -> Result<HeadMatrix> {
    if sentences.is_empty() {
        return Err(Error::EmptyInput("sentences".into()));
    }
    let mut sum = None;
    for (id, words) in sentences {
        if a.token_ids(words)? != b.token_ids(words)? {
            return Err(Error::TokenizerMismatch(format!("sentence {id} tokenizes differently")));
        }
        let (ta, _) = a.attention(id, words)?;
        let (tb, _) = b.attention(id, words)?;
        accumulate(&mut sum, &sentence_distance(&ta, &tb)?);
    }
    let mut m = sum.expect("non-empty");
    m.scale(1.0 / sentences.len() as f64);
    Ok(m)
}

/// Mean over the heads of each layer.
pub fn layer_distance(matrix: &HeadMatrix) -> Vec<f64> {
    matrix
        .values
        .chunks(matrix.heads)
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnySeriousReport {
    /// Absent when no pair qualified.
    pub matrix: Option<HeadMatrix>,
    pub used: usize,
    /// Pairs skipped because the two sentences tokenize to different lengths.
    pub excluded: usize,
}

/// Per-head distance between each funny sentence and its serious
/// counterpart, averaged over pairs of equal tokenized length.
pub fn funny_serious_distance(source: &dyn AttentionSource, pairs: &[(String, &TokenAlignment)]) -> Result<FunnySeriousReport> {
    let mut sum = None;
    let (mut used, mut excluded) = (0, 0);
    for (id, al) in pairs {
        if source.token_ids(&al.funny_tokens)?.len() != source.token_ids(&al.serious_tokens)?.len() {
            excluded += 1;
            continue;
        }
        let (f, _) = source.attention(&format!("{id}/funny"), &al.funny_tokens)?;
        let (s, _) = source.attention(&format!("{id}/serious"), &al.serious_tokens)?;
        accumulate(&mut sum, &sentence_distance(&f, &s)?);
        used += 1;
    }
    if let Some(m) = sum.as_mut() {
        m.scale(1.0 / used as f64);
    }
    Ok(FunnySeriousReport { matrix: sum, used, excluded })
}

/// Total attention received, over every head and query row, by the first
/// word, the last word, the start delimiter and the end delimiter.
pub fn special_totals(tensor: &AttentionTensor, map: &SubwordChunkMap) -> [f64; 4] {
    let mut received = vec![0.0; tensor.seq_len()];
    for h in tensor.head_ids() {
        received.iter_mut().zip(tensor.received(h)).for_each(|(a, b)| *a += b);
    }
    let words = map.word_totals(&received);
    [
        words[0],
        words[words.len() - 1],
        received[0],
        received[tensor.seq_len() - 1],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialTotals {
    pub first_word: f64,
    pub last_word: f64,
    pub start_token: f64,
    pub end_token: f64,
    /// Per sentence, in input order: first word, last word, start, end.
    pub per_sentence: Vec<[f64; 4]>,
}

pub fn special_position_attention(source: &dyn AttentionSource, sentences: &[(String, Vec<String>)]) -> Result<SpecialTotals> {
    if sentences.is_empty() {
        return Err(Error::EmptyInput("sentences".into()));
    }
    let per_sentence = sentences
        .iter()
        .map(|(id, words)| {
            let (t, map) = source.attention(id, words)?;
            Ok(special_totals(&t, &map))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_sentence.len() as f64;
    let mean = |k: usize| per_sentence.iter().map(|v| v[k]).sum::<f64>() / n;
    Ok(SpecialTotals {
        first_word: mean(0),
        last_word: mean(1),
        start_token: mean(2),
        end_token: mean(3),
        per_sentence,
    })
}

/// Un-normalized received attention per head for a chunk and for the
/// remaining word positions, with their position counts.
pub fn chunk_totals(tensor: &AttentionTensor, map: &SubwordChunkMap, span: Range<usize>) -> (HeadMatrix, HeadMatrix, usize, usize) {
    let inside = map.positions(span.clone());
    let others = map.others(span);
    let mut chunk = HeadMatrix::zeros(tensor.layers(), tensor.heads());
    let mut rest = chunk.clone();
    for h in tensor.head_ids() {
        let r = tensor.received(h);
        *chunk.get_mut(h) = inside.clone().map(|p| r[p]).sum();
        *rest.get_mut(h) = others.iter().map(|&p| r[p]).sum();
    }
    (chunk, rest, inside.len(), others.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkMaps {
    /// (a) modified chunk of the funny sentence.
    pub funny_chunk: Option<HeadMatrix>,
    /// (b) other words of the funny sentence.
    pub funny_other: Option<HeadMatrix>,
    /// (c) edited chunk of the serious sentence.
    pub serious_chunk: Option<HeadMatrix>,
    /// (d) other words of the serious sentence.
    pub serious_other: Option<HeadMatrix>,
    pub pairs: usize,
    /// Pairs left out of (a) because the funny span is empty.
    pub empty_funny_spans: usize,
    /// Pairs left out of (c) because the serious span is empty.
    pub empty_serious_spans: usize,
}

#[derive(Default)]
struct Mean {
    sum: Option<HeadMatrix>,
    count: usize,
}

impl Mean {
    fn add(&mut self, m: &HeadMatrix, per: usize) {
        let mut m = m.clone();
        m.scale(1.0 / per as f64);
        accumulate(&mut self.sum, &m);
        self.count += 1;
    }

    fn finish(self) -> Option<HeadMatrix> {
        self.sum.map(|mut s| {
            s.scale(1.0 / self.count as f64);
            s
        })
    }
}

/// Per-head attention received by the modified chunk and by the remaining
/// words of both sentences, normalized by the number of positions and
/// averaged over pairs.
pub fn chunk_attention_maps(source: &dyn AttentionSource, pairs: &[(String, &TokenAlignment)]) -> Result<ChunkMaps> {
    let mut maps: [Mean; 4] = Default::default();
    let (mut empty_f, mut empty_s) = (0, 0);
    for (id, al) in pairs {
        let (ft, fm) = source.attention(&format!("{id}/funny"), &al.funny_tokens)?;
        let (st, sm) = source.attention(&format!("{id}/serious"), &al.serious_tokens)?;
        for (tensor, map, span, slot, empty) in [
            (&ft, &fm, al.funny_span.clone(), 0, &mut empty_f),
            (&st, &sm, al.serious_span.clone(), 2, &mut empty_s),
        ] {
            let (chunk, rest, n_chunk, n_rest) = chunk_totals(tensor, map, span);
            if n_chunk == 0 {
                *empty += 1;
            } else {
                maps[slot].add(&chunk, n_chunk);
            }
            if n_rest > 0 {
                maps[slot + 1].add(&rest, n_rest);
            }
        }
    }
    let [a, b, c, d] = maps;
    Ok(ChunkMaps {
        funny_chunk: a.finish(),
        funny_other: b.finish(),
        serious_chunk: c.finish(),
        serious_other: d.finish(),
        pairs: pairs.len(),
        empty_funny_spans: empty_f,
        empty_serious_spans: empty_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::testing::*;
    use crate::attention::HeadId;
    use crate::corpus::align_tokens;
    use std::collections::HashMap;

    /// Serves fixed tensors by sentence id.
    struct Table(HashMap<String, (AttentionTensor, SubwordChunkMap)>);

    impl AttentionSource for Table {
        fn attention(&self, id: &str, _: &[String]) -> Result<(AttentionTensor, SubwordChunkMap)> {
            Ok(self.0[id].clone())
        }

        fn token_ids(&self, words: &[String]) -> Result<Vec<u32>> {
            Ok(vec![0; words.len() + 2])
        }
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn identical_inputs_have_zero_distance() {
        let t = random_tensor("s", 2, 2, 5, 3);
        assert!(sentence_distance(&t, &t).unwrap().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_three_by_three() {
        // one-word sentence, 3 query rows, single head
        let a = AttentionTensor::new("s", 1, 1, 3, vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.2, 0.3, 0.5]).unwrap();
        let b = AttentionTensor::new("s", 1, 1, 3, vec![0.0, 1.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.3, 0.2]).unwrap();
        let js3 = {
            let (p, q) = ([0.2f64, 0.3, 0.5], [0.5f64, 0.3, 0.2]);
            (0..3)
                .map(|i| {
                    let m = (p[i] + q[i]) / 2.0;
                    0.5 * p[i] * (p[i] / m).log2() + 0.5 * q[i] * (q[i] / m).log2()
                })
                .sum::<f64>()
        };
        let expected = (1.0 + 0.0 + js3) / 3.0;
        assert!((sentence_distance(&a, &b).unwrap().values[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn layer_means() {
        let m = HeadMatrix { layers: 2, heads: 2, values: vec![1.0, 3.0, 5.0, 7.0] };
        assert_eq!(layer_distance(&m), vec![2.0, 6.0]);
        let c = HeadMatrix { layers: 3, heads: 4, values: vec![0.25; 12] };
        assert_eq!(layer_distance(&c), vec![0.25; 3]);
    }

    /// Brute force over raw entries: index arithmetic written out in full.
    fn raw(t: &AttentionTensor, l: usize, h: usize, q: usize, k: usize) -> f64 {
        let n = t.seq_len();
        f64::from(t.weights()[((l * t.heads() + h) * n + q) * n + k])
    }

    fn brute_js(t: &AttentionTensor, u: &AttentionTensor, l: usize, h: usize, q: usize) -> f64 {
        let n = t.seq_len();
        let mut s = 0.0;
        for k in 0..n {
            let (p, r) = (raw(t, l, h, q, k), raw(u, l, h, q, k));
            let m = (p + r) / 2.0;
            if p > 0.0 {
                s += 0.5 * p * (p / m).ln() / std::f64::consts::LN_2;
            }
            if r > 0.0 {
                s += 0.5 * r * (r / m).ln() / std::f64::consts::LN_2;
            }
        }
        s
    }

    #[test]
    fn aggregation_matches_brute_force() {
        let (layers, heads) = (3, 4);
        let mut table = HashMap::new();
        let mut other = HashMap::new();
        let mut sentences = Vec::new();
        for i in 0..24 {
            let n_words = 2 + i % 5;
            let id = format!("s{i}");
            let ws: Vec<String> = (0..n_words).map(|k| format!("w{k}")).collect();
            table.insert(id.clone(), (random_tensor(&id, layers, heads, n_words + 2, i as u64), one_per_word(n_words)));
            other.insert(id.clone(), (random_tensor(&id, layers, heads, n_words + 2, 100 + i as u64), one_per_word(n_words)));
            sentences.push((id, ws));
        }
        let (a, b) = (Table(table), Table(other));
        let fast = model_head_distance(&a, &b, &sentences).unwrap();
        let layers_fast = layer_distance(&fast);
        for l in 0..layers {
            let mut layer_sum = 0.0;
            for h in 0..heads {
                let mut total = 0.0;
                for (id, _) in &sentences {
                    let (t, u) = (&a.0[id].0, &b.0[id].0);
                    let n = t.seq_len();
                    total += (0..n).map(|q| brute_js(t, u, l, h, q)).sum::<f64>() / n as f64;
                }
                let slow = total / sentences.len() as f64;
                assert!((fast.get(HeadId::new(l + 1, h + 1)) - slow).abs() < 1e-6);
                layer_sum += slow;
            }
            assert!((layers_fast[l] - layer_sum / heads as f64).abs() < 1e-6);
        }

        let special = special_position_attention(&a, &sentences).unwrap();
        let mut sums = [0.0; 4];
        for (id, _) in &sentences {
            let t = &a.0[id].0;
            let n = t.seq_len();
            for l in 0..layers {
                for h in 0..heads {
                    for q in 0..n {
                        sums[0] += raw(t, l, h, q, 1);
                        sums[1] += raw(t, l, h, q, n - 2);
                        sums[2] += raw(t, l, h, q, 0);
                        sums[3] += raw(t, l, h, q, n - 1);
                    }
                }
            }
        }
        let got = [special.first_word, special.last_word, special.start_token, special.end_token];
        for k in 0..4 {
            assert!((got[k] - sums[k] / sentences.len() as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn funny_serious_aggregation_and_exclusion() {
        let (layers, heads) = (2, 3);
        let mut table = HashMap::new();
        let mut alignments = Vec::new();
        for i in 0..20 {
            let tail = if i % 4 == 0 { "x y" } else { "x" };
            let f = format!("a b c {tail} funny{i}");
            let s = format!("a b c {tail} serious{i}");
            let al = align_tokens(words(&f), words(&s)).unwrap();
            let n = al.funny_tokens.len() + 2;
            table.insert(format!("p{i}/funny"), (random_tensor("f", layers, heads, n, i), one_per_word(n - 2)));
            table.insert(format!("p{i}/serious"), (random_tensor("s", layers, heads, n, 50 + i), one_per_word(n - 2)));
            alignments.push((format!("p{i}"), al));
        }
        // make one pair unequal in length
        let uneven = align_tokens(words("a b c"), words("a b d e")).unwrap();
        alignments.push(("odd".into(), uneven));
        let src = Table(table);
        let pairs: Vec<(String, &TokenAlignment)> = alignments.iter().map(|(id, a)| (id.clone(), a)).collect();
        let report = funny_serious_distance(&src, &pairs).unwrap();
        assert_eq!((report.used, report.excluded), (20, 1));
        let m = report.matrix.unwrap();
        for hid in HeadId::all(layers, heads) {
            let mut total = 0.0;
            for (id, _) in &alignments[..20] {
                let (t, u) = (&src.0[&format!("{id}/funny")].0, &src.0[&format!("{id}/serious")].0);
                let n = t.seq_len();
                total += (0..n).map(|q| brute_js(t, u, hid.layer - 1, hid.head - 1, q)).sum::<f64>() / n as f64;
            }
            assert!((m.get(hid) - total / 20.0).abs() < 1e-6);
        }
    }

    #[test]
    fn same_sentence_pair_is_zero() {
        let src = Uniform { layers: 2, heads: 2 };
        let al = align_tokens(words("a b c"), words("a b d")).unwrap();
        let r = funny_serious_distance(&src, &[("p".into(), &al)]).unwrap();
        assert!(r.matrix.unwrap().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uniform_attention_special_totals() {
        let src = Uniform { layers: 3, heads: 2 };
        let s = special_position_attention(&src, &[("s".into(), words("a b c d"))]).unwrap();
        // each single position receives L·H·n·(1/n)
        for v in [s.first_word, s.last_word, s.start_token, s.end_token] {
            assert!((v - 6.0).abs() < 1e-5);
        }
        let one = special_position_attention(&src, &[("s".into(), words("solo"))]).unwrap();
        assert_eq!(one.first_word, one.last_word);
    }

    #[test]
    fn chunk_maps_on_constructed_attention() {
        // funny "a b X c": every query row puts all mass on word X (position 3)
        let n = 6;
        let mut w = vec![0.0f32; n * n];
        for q in 0..n {
            w[q * n + 3] = 1.0;
        }
        let funny = AttentionTensor::new("f", 1, 1, n, w).unwrap();
        let al = align_tokens(words("a b X c"), words("a b Y c")).unwrap();
        assert_eq!(al.funny_span, 2..3);
        let mut table = HashMap::new();
        table.insert("p/funny".to_string(), (funny.clone(), one_per_word(4)));
        table.insert("p/serious".to_string(), (uniform_tensor("s", 1, 1, n), one_per_word(4)));
        let maps = chunk_attention_maps(&Table(table), &[("p".into(), &al)]).unwrap();
        // all n query rows land on the one chunk position
        assert_eq!(maps.funny_chunk.unwrap().values, vec![n as f64]);
        assert_eq!(maps.funny_other.unwrap().values, vec![0.0]);

        // un-normalized chunk + other equals total received by word positions
        let t = random_tensor("r", 2, 2, 7, 9);
        let map = one_per_word(5);
        let (chunk, rest, _, _) = chunk_totals(&t, &map, 1..3);
        for h in t.head_ids() {
            let r = t.received(h);
            let words_total: f64 = r[1..6].iter().sum();
            assert!((chunk.get(h) + rest.get(h) - words_total).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_serious_span_excluded() {
        let al = align_tokens(words("new disposable car"), words("new car")).unwrap();
        assert!(al.serious_span.is_empty());
        let maps = chunk_attention_maps(&Uniform { layers: 1, heads: 2 }, &[("p".into(), &al)]).unwrap();
        assert_eq!(maps.empty_serious_spans, 1);
        assert!(maps.serious_chunk.is_none());
        assert!(maps.funny_chunk.is_some());
    }
}
