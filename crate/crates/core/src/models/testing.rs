//! Small self-contained model cache for tests and offline demos.
//!
//! The models are randomly initialised and tiny. They exercise every code
//! path but carry no linguistic knowledge.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gpt2::{Gpt2, Gpt2Config};
use super::transformer::{Family, TransformerConfig, TransformerEncoder};
use super::vectors::WordVectors;
use crate::{Error, Result};

/// Cache id of the tiny masked-LM encoder.
pub const TINY_MLM: &str = "tiny-bert";
/// Cache id of the tiny causal LM.
pub const TINY_LM: &str = "tiny-gpt2";
/// Cache id of the tiny word-vector file.
pub const TINY_VECTORS: &str = "tiny-vectors.vec";

/// Whole-word entries of the fixture vocabulary.
pub const FIXTURE_WORDS: &[&str] = &[
    "the", "a", "to", "of", "in", "for", "on", "with", "new", "man", "woman", "city", "opens",
    "art", "museum", "jail", "tiger", "woods", "announces", "return", "golf", "sex", "bp",
    "ready", "resume", "oil", "drilling", "spilling", "family", "takes", "rare", "trip", "mall",
    "home", "country", "general", "motors", "reports", "record", "sales", "car", "disposable",
    "area", "local", "report", "study", "finds", "nation", "shocked", "by", "dog", "cat",
    "school", "teacher", "students", "president", "congress", "war", "peace", "money", "bank",
    "police", "arrest", "beer", "pizza", "love", "hate", "god", "church", "job", "boss",
    "weather", "rain", "sun", "new", "old", "big", "small",
];

const WORD_DIM: usize = 8;

/// Writes the tiny models into `root`, which then works as a model cache.
pub fn write_tiny_models(root: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_mlm(&root.join(TINY_MLM), seed)?;
    write_lm(&root.join(TINY_LM), seed)?;
    write_vectors(&root.join(TINY_VECTORS), seed)
}

fn wordpiece_vocab() -> Vec<String> {
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    for w in FIXTURE_WORDS {
        if seen.insert(*w) {
            vocab.push(w.to_string());
        }
    }
    for c in ('a'..='z').chain('0'..='9') {
        vocab.push(c.to_string());
        vocab.push(format!("##{c}"));
    }
    for p in ".,:;!?'\"-()&$%/".chars() {
        vocab.push(p.to_string());
    }
    vocab
}

fn write_mlm(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = wordpiece_vocab();
    let path = dir.join("vocab.txt");
    std::fs::write(&path, vocab.join("\n")).map_err(|e| Error::io(path, e))?;
    let config = TransformerConfig {
        family: Family::Bert,
        vocab_size: vocab.len(),
        hidden_size: 16,
        num_layers: 3,
        num_heads: 4,
        intermediate_size: 32,
        max_positions: 128,
        type_vocab_size: 2,
        layer_norm_eps: 1e-12,
        pad_token_id: 0,
    };
    TransformerEncoder::random(config, seed)?.save_pretrained(dir)
}

/// The byte-to-character table of byte-level BPE vocabularies.
fn byte_chars() -> Vec<char> {
    let printable = |b: u32| (33..=126).contains(&b) || (161..=172).contains(&b) || b >= 174;
    let mut extra = 0;
    (0u32..256)
        .map(|b| {
            if printable(b) {
                char::from_u32(b).unwrap()
            } else {
                extra += 1;
                char::from_u32(255 + extra).unwrap()
            }
        })
        .collect()
}

fn write_lm(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // byte-level vocabulary without merges: every byte is a token
    let mut vocab: BTreeMap<String, usize> = byte_chars()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c.to_string(), i))
        .collect();
    vocab.insert("<|endoftext|>".into(), 256);
    let path = dir.join("vocab.json");
    std::fs::write(&path, serde_json::to_string(&vocab)?).map_err(|e| Error::io(path, e))?;
    let path = dir.join("merges.txt");
    std::fs::write(&path, "#version: 0.2\n").map_err(|e| Error::io(path, e))?;
    let config = Gpt2Config {
        vocab_size: 257,
        n_positions: 256,
        n_embd: 16,
        n_layer: 2,
        n_head: 2,
        layer_norm_epsilon: 1e-5,
    };
    Gpt2::random(config, seed ^ 0x9e37)?.save_pretrained(dir)
}

fn write_vectors(path: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut seen = std::collections::BTreeSet::new();
    let pairs = FIXTURE_WORDS
        .iter()
        .filter(|w| seen.insert(**w))
        .map(|w| {
            let v = (0..WORD_DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            (w.to_string(), v)
        })
        .collect();
    WordVectors::from_pairs(pairs)?.save(path)
}

/// Tab-separated synthetic corpus built from the fixture vocabulary.
///
/// Each serious headline is a random word sequence; its funny twin swaps
/// one or two adjacent words for words drawn from a separate pool, so the
/// edit is learnable. Test pairs get quality ratings and some get a humor
/// type.
pub fn synthetic_corpus_tsv(train: usize, val: usize, test: usize, seed: u64) -> String {
    const FUNNY: &[&str] = &["sex", "beer", "pizza", "god", "jail", "dog", "cat", "spilling", "disposable", "love"];
    let plain: Vec<&str> = FIXTURE_WORDS.iter().copied().filter(|w| !FUNNY.contains(w)).collect();
    let types = crate::corpus::HumorType::ALL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("pair_id\tfunny\tserious\tsplit\tquality\thumor_type\n");
    let mut k = 0;
    for (split, n) in [("train", train), ("val", val), ("test", test)] {
        for _ in 0..n {
            let len = rng.random_range(4..9);
            let serious: Vec<&str> = (0..len).map(|_| plain[rng.random_range(0..plain.len())]).collect();
            let mut funny = serious.clone();
            let at = rng.random_range(0..len);
            let width = if at + 1 < len && rng.random_bool(0.2) { 2 } else { 1 };
            for w in &mut funny[at..at + width] {
                *w = FUNNY[rng.random_range(0..FUNNY.len())];
            }
            let (quality, kind) = if split == "test" {
                let q = rng.random_range(1..=3).to_string();
                let t = if rng.random_bool(0.5) { types[rng.random_range(0..types.len())].label().to_string() } else { String::new() };
                (q, t)
            } else {
                (String::new(), String::new())
            };
            out.push_str(&format!("p{k:05}\t{}\t{}\t{split}\t{quality}\t{kind}\n", funny.join(" "), serious.join(" ")));
            k += 1;
        }
    }
    out
}

#[cfg(test)]
pub(crate) use fixture::TinyModels;
