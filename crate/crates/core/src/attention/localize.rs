//! Edit localization with a single head, its baselines, and the
//! random-replacement activation check.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionSource, AttentionTensor, HeadId, SubwordChunkMap};
use crate::corpus::TokenAlignment;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Localization {
    pub predicted: usize,
    pub hit: bool,
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > values[best] { i } else { best })
}

/// Predicts the word receiving the most attention at `head`, summing
/// over query rows and over the word's subwords. The first word wins ties.
pub fn localize_edit(tensor: &AttentionTensor, map: &SubwordChunkMap, head: HeadId, gold: Range<usize>) -> Localization {
    let totals = map.word_totals(&tensor.received(head));
    let predicted = argmax(&totals);
    Localization { predicted, hit: gold.contains(&predicted) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Verb,
    Noun,
    Adjective,
    Other,
}

impl PosTag {
    /// Maps Penn Treebank or universal tags onto the coarse classes.
    pub fn from_tag(tag: &str) -> PosTag {
        let t = tag.trim().to_ascii_uppercase();
        if t == "VERB" || t.starts_with("VB") {
            PosTag::Verb
        } else if t == "NOUN" || t == "PROPN" || t.starts_with("NN") {
            PosTag::Noun
        } else if t == "ADJ" || t.starts_with("JJ") {
            PosTag::Adjective
        } else {
            PosTag::Other
        }
    }
}

pub trait PosTagger {
    fn tag(&self, words: &[String]) -> Vec<PosTag>;
}

/// Context-free tagger reading `word<TAB>tag` lines, for instance the
/// most frequent tag per word exported from a tagged corpus.
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    tags: HashMap<String, PosTag>,
}

impl LexiconTagger {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        LexiconTagger {
            tags: pairs.into_iter().map(|(w, t)| (w.to_lowercase(), PosTag::from_tag(t))).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, t) = line.split_once('\t').ok_or_else(|| Error::MalformedRow {
                row: n + 1,
                reason: "expected word<TAB>tag".into(),
            })?;
            pairs.push((w, t));
        }
        Ok(Self::from_pairs(pairs))
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, words: &[String]) -> Vec<PosTag> {
        words.iter().map(|w| self.tags.get(w.as_str()).copied().unwrap_or(PosTag::Other)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineHits {
    pub last_word: bool,
    pub first_verb: bool,
    pub lowest_likelihood: bool,
}

/// The three attention-free guesses for one funny sentence: the last word,
/// the first verb (last word when there is none), and the word with the
/// lowest in-context log-likelihood.
pub fn localization_baselines(
    words: &[String],
    gold: Range<usize>,
    tagger: &dyn PosTagger,
    word_logprobs: &dyn Fn(&[String]) -> Result<Vec<f64>>,
) -> Result<BaselineHits> {
    if words.is_empty() {
        return Err(Error::EmptySentence);
    }
    let last = words.len() - 1;
    let verb = tagger.tag(words).iter().position(|t| *t == PosTag::Verb).unwrap_or(last);
    let lp = word_logprobs(words)?;
    let neg: Vec<f64> = lp.iter().map(|x| -x).collect();
    Ok(BaselineHits {
        last_word: gold.contains(&last),
        first_verb: gold.contains(&verb),
        lowest_likelihood: gold.contains(&argmax(&neg)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub head: HeadId,
    pub sentences: usize,
    /// Funny sentences skipped because their modified span is empty.
    pub skipped: usize,
    pub head_accuracy: f64,
    pub last_word_accuracy: f64,
    pub first_verb_accuracy: f64,
    pub lowest_likelihood_accuracy: f64,
    pub per_sentence: Vec<(String, Localization, BaselineHits)>,
}

/// Runs head localization and the baselines over funny sentences.
pub fn localization_report(
    source: &dyn AttentionSource,
    head: HeadId,
    pairs: &[(String, &TokenAlignment)],
    tagger: &dyn PosTagger,
    word_logprobs: &dyn Fn(&[String]) -> Result<Vec<f64>>,
) -> Result<LocalizationReport> {
    let mut per_sentence = Vec::new();
    let mut skipped = 0;
    for (id, al) in pairs {
        if al.funny_span.is_empty() {
            skipped += 1;
            continue;
        }
        let (t, map) = source.attention(&format!("{id}/funny"), &al.funny_tokens)?;
        head.check(t.layers(), t.heads())?;
        let loc = localize_edit(&t, &map, head, al.funny_span.clone());
        let base = localization_baselines(&al.funny_tokens, al.funny_span.clone(), tagger, word_logprobs)?;
        per_sentence.push((id.clone(), loc, base));
    }
    if per_sentence.is_empty() {
        return Err(Error::EmptyInput("funny sentences with a modified span".into()));
    }
    let n = per_sentence.len() as f64;
    let rate = |f: &dyn Fn(&(String, Localization, BaselineHits)) -> bool| {
        per_sentence.iter().filter(|x| f(x)).count() as f64 / n
    };
    Ok(LocalizationReport {
        head,
        sentences: per_sentence.len(),
        skipped,
        head_accuracy: rate(&|x| x.1.hit),
        last_word_accuracy: rate(&|x| x.2.last_word),
        first_verb_accuracy: rate(&|x| x.2.first_verb),
        lowest_likelihood_accuracy: rate(&|x| x.2.lowest_likelihood),
        per_sentence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementReport {
    pub head: HeadId,
    pub sentences: usize,
    pub skipped: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    /// `mean_after / mean_before`.
    pub ratio: f64,
}

/// Replaces the modified words of each funny sentence with words drawn
/// uniformly from `vocabulary` and compares the attention the head pays
/// to those positions before and after.
pub fn random_replacement_activation(
    source: &dyn AttentionSource,
    head: HeadId,
    pairs: &[(String, &TokenAlignment)],
    seed: u64,
    vocabulary: &[String],
) -> Result<ReplacementReport> {
    if vocabulary.is_empty() {
        return Err(Error::EmptyInput("replacement vocabulary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut before, mut after, mut used, mut skipped) = (0.0, 0.0, 0, 0);
    for (id, al) in pairs {
        let span = al.funny_span.clone();
        if span.is_empty() {
            skipped += 1;
            continue;
        }
        let (t, map) = source.attention(&format!("{id}/funny"), &al.funny_tokens)?;
        head.check(t.layers(), t.heads())?;
        let r = t.received(head);
        before += map.positions(span.clone()).map(|p| r[p]).sum::<f64>();

        let mut words = al.funny_tokens.clone();
        for w in &mut words[span.clone()] {
            *w = vocabulary.choose(&mut rng).expect("non-empty").clone();
        }
        let (t2, map2) = source.attention(&format!("{id}/replaced"), &words)?;
        let r2 = t2.received(head);
        after += map2.positions(span).map(|p| r2[p]).sum::<f64>();
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyInput("funny sentences with a modified span".into()));
    }
    let (mb, ma) = (before / used as f64, after / used as f64);
    Ok(ReplacementReport { head, sentences: used, skipped, mean_before: mb, mean_after: ma, ratio: ma / mb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::testing::*;
    use crate::corpus::align_tokens;
    use crate::models::testing::TinyModels;
    use crate::models::{EncoderKind, ModelVariant, VariantConfig};
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn no_lm(w: &[String]) -> Result<Vec<f64>> {
        Ok(vec![-1.0; w.len()])
    }

    #[test]
    fn concentrated_attention_hits_gold() {
        // words a b X c, X at position 3, second subword layout: b spans 2..4
        let map = SubwordChunkMap::new(7, vec![1..2, 2..4, 4..5, 5..6]).unwrap();
        let n = 7;
        let mut w = vec![0.0f32; n * n];
        for q in 0..n {
            w[q * n + 4] = 1.0;
        }
        let t = AttentionTensor::new("s", 1, 1, n, w).unwrap();
        let loc = localize_edit(&t, &map, HeadId::new(1, 1), 2..3);
        assert_eq!(loc, Localization { predicted: 2, hit: true });
    }

    #[test]
    fn word_sums_match_raw_entries() {
        let map = SubwordChunkMap::new(8, vec![1..3, 3..4, 4..7]).unwrap();
        for seed in 0..25 {
            let t = random_tensor("s", 2, 2, 8, seed);
            for h in t.head_ids() {
                let fast = map.word_totals(&t.received(h));
                let base = ((h.layer - 1) * 2 + h.head - 1) * 64;
                for (wi, r) in map.words.iter().enumerate() {
                    let mut s = 0.0;
                    for q in 0..8 {
                        for k in r.clone() {
                            s += f64::from(t.weights()[base + q * 8 + k]);
                        }
                    }
                    assert!((fast[wi] - s).abs() < 1e-6);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn argmax_survives_monotone_rescaling(v in prop::collection::vec(0.0f64..10.0, 1..12), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let scaled: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            prop_assert_eq!(argmax(&v), argmax(&scaled));
            let cubed: Vec<f64> = v.iter().map(|x| x.powi(3)).collect();
            prop_assert_eq!(argmax(&v), argmax(&cubed));
        }
    }

    #[test]
    fn baselines() {
        let tagger = LexiconTagger::from_pairs([("announces", "VBZ"), ("woods", "NNP")]);
        let w = words("tiger woods announces return to sex");
        let hits = localization_baselines(&w, 5..6, &tagger, &no_lm).unwrap();
        assert!(hits.last_word);
        assert!(!hits.first_verb);
        // lowest likelihood at index 1
        let lm = |w: &[String]| Ok((0..w.len()).map(|i| if i == 1 { -9.0 } else { -1.0 }).collect());
        assert!(localization_baselines(&w, 1..2, &tagger, &lm).unwrap().lowest_likelihood);
        // no verb: fall back to the last word
        let plain = LexiconTagger::default();
        assert!(localization_baselines(&w, 5..6, &plain, &no_lm).unwrap().first_verb);
        assert_eq!(PosTag::from_tag("VERB"), PosTag::Verb);
        assert_eq!(PosTag::from_tag("JJR"), PosTag::Adjective);
    }

    #[test]
    fn lexicon_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.tsv");
        std::fs::write(&p, "Opens\tVBZ\ncity\tNN\n\n").unwrap();
        let t = LexiconTagger::load(&p).unwrap();
        assert_eq!(t.tag(&words("city opens")), vec![PosTag::Noun, PosTag::Verb]);
        std::fs::write(&p, "broken line\n").unwrap();
        assert!(LexiconTagger::load(&p).is_err());
    }

    #[test]
    fn uniform_model_ratio_is_one() {
        let al = align_tokens(words("a b c d"), words("a b e d")).unwrap();
        let vocab = words("x y z");
        let r = random_replacement_activation(&Uniform { layers: 2, heads: 2 }, HeadId::new(2, 1), &[("p".into(), &al)], 3, &vocab).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_replacement_ratio_is_one() {
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
        let al = align_tokens(words("tiger woods announces return to sex"), words("tiger woods announces return to golf")).unwrap();
        let r = random_replacement_activation(&v, HeadId::new(3, 2), &[("p".into(), &al)], 1, &words("sex")).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-9);
        let r2 = random_replacement_activation(&v, HeadId::new(3, 2), &[("p".into(), &al)], 1, &words("golf pizza beer")).unwrap();
        let r3 = random_replacement_activation(&v, HeadId::new(3, 2), &[("p".into(), &al)], 1, &words("golf pizza beer")).unwrap();
        assert_eq!(r2, r3);
        let tagger = LexiconTagger::default();
        let rep = localization_report(&v, HeadId::new(3, 2), &[("p".into(), &al)], &tagger, &no_lm).unwrap();
        assert_eq!(rep.sentences, 1);
        assert_eq!(rep.last_word_accuracy, 1.0);
        assert!(localization_report(&v, HeadId::new(9, 2), &[("p".into(), &al)], &tagger, &no_lm).is_err());
    }
}
