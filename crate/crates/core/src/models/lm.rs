//! Causal language-model likelihood baselines.

use serde::{Deserialize, Serialize};

use super::cache::ModelCache;
use super::gpt2::{Gpt2, Gpt2Config};
use super::tokenizer::{SubwordLayout, SubwordTokenizer, TokenizerKind};
use crate::corpus::word_tokenize;
use crate::{Error, Result};

/// How token log-probabilities are combined into a sentence score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmNormalization {
    /// Sum of token log-probabilities.
    #[default]
    Total,
    /// Sum divided by the number of scored tokens.
    PerToken,
}

pub struct CausalLm {
    model: Gpt2,
    tokenizer: SubwordTokenizer,
}

impl std::fmt::Debug for CausalLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CausalLm").field("model", &self.model).finish()
    }
}

impl CausalLm {
    pub fn new(model: Gpt2, tokenizer: SubwordTokenizer) -> Self {
        CausalLm { model, tokenizer }
    }

    pub fn load(cache: &ModelCache, lm_id: &str) -> Result<Self> {
        let dir = cache.resolve(lm_id)?;
        let cfg_path = dir.join("config.json");
        let text =
            std::fs::read_to_string(&cfg_path).map_err(|_| Error::MissingArtifact(cfg_path))?;
        let config = Gpt2Config::from_hf_json(&text)?;
        let tokenizer = SubwordTokenizer::from_dir(&dir, TokenizerKind::Gpt2)?;
        let model = Gpt2::from_checkpoint(config, &dir.join("model.safetensors"))?;
        Ok(CausalLm { model, tokenizer })
    }

    pub fn model(&self) -> &Gpt2 {
        &self.model
    }

    /// Sequence-start token followed by the sentence's subwords.
    pub fn layout(&self, words: &[String]) -> Result<SubwordLayout> {
        if words.is_empty() {
            return Err(Error::EmptySentence);
        }
        self.tokenizer.layout(words, None)
    }

    /// Log-probability of every subword after the start token.
    pub fn token_logprobs(&self, words: &[String]) -> Result<Vec<f64>> {
        let layout = self.layout(words)?;
        self.model.token_logprobs(&layout.ids)
    }

    /// Total log-probability of a sentence (≤ 0).
    pub fn sentence_logprob(&self, sentence: &str) -> Result<f64> {
        self.sentence_score(sentence, LmNormalization::Total)
    }

    pub fn sentence_score(&self, sentence: &str, norm: LmNormalization) -> Result<f64> {
        let lp = self.token_logprobs(&word_tokenize(sentence))?;
        let total: f64 = lp.iter().sum();
        Ok(match norm {
            LmNormalization::Total => total,
            LmNormalization::PerToken => total / lp.len() as f64,
        })
    }

    /// In-context log-likelihood of each word: the sum over its subwords.
    pub fn word_logprobs(&self, words: &[String]) -> Result<Vec<f64>> {
        let layout = self.layout(words)?;
        let lp = self.model.token_logprobs(&layout.ids)?;
        Ok(layout
            .words
            .iter()
            .map(|r| r.clone().map(|p| lp[p - 1]).sum())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Fits the rule "funny iff score < threshold" to `(score, is_funny)`
/// pairs, maximising accuracy.
///
/// Candidates are one value below all scores, the midpoints between
/// adjacent distinct scores, and one value above all scores. The smallest
/// maximising candidate wins.
pub fn lm_threshold_search(scores: &[(f64, bool)]) -> Result<ThresholdFit> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("threshold search scores".into()));
    }
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Config("non-finite score".into()));
    }
    let positives = scores.iter().filter(|(_, l)| *l).count();
    if positives == 0 || positives == scores.len() {
        return Err(Error::SingleClass);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    // threshold below everything: all predicted serious
    let mut correct = n - positives;
    let mut best = (sorted[0].0 - 1.0, correct);
    let mut i = 0;
    while i < n {
        let value = sorted[i].0;
        while i < n && sorted[i].0 == value {
            if sorted[i].1 {
                correct += 1;
            } else {
                correct -= 1;
            }
            i += 1;
        }
        let threshold = if i < n {
            (value + sorted[i].0) / 2.0
        } else {
            value + 1.0
        };
        if correct > best.1 {
            best = (threshold, correct);
        }
    }
    Ok(ThresholdFit {
        threshold: best.0,
        accuracy: best.1 as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    /// 0 when the first sentence is predicted funny, 1 for the second.
    pub index: usize,
    pub tie: bool,
}

/// Predicts the less likely sentence as the funny one.
pub fn lm_pair_predict(lm: &CausalLm, first: &str, second: &str) -> Result<PairPrediction> {
    let a = lm.sentence_logprob(first)?;
    let b = lm.sentence_logprob(second)?;
    Ok(pair_from_scores(a, b))
}

pub fn pair_from_scores(first: f64, second: f64) -> PairPrediction {
    PairPrediction {
        index: usize::from(second < first),
        tie: first == second,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::TinyModels;
    use proptest::prelude::*;

    /// Exhaustive scan over every candidate threshold.
    fn brute_force(scores: &[(f64, bool)]) -> (f64, f64) {
        let mut values: Vec<f64> = scores.iter().map(|s| s.0).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut candidates = vec![values[0] - 1.0];
        candidates.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        candidates.push(values[values.len() - 1] + 1.0);
        let mut best = (f64::NAN, -1.0);
        for t in candidates {
            let acc = scores.iter().filter(|(s, l)| (*s < t) == *l).count() as f64
                / scores.len() as f64;
            if acc > best.1 {
                best = (t, acc);
            }
        }
        best
    }

    #[test]
    fn hand_case_matches_scan() {
        let scores = [
            (-1.0, true),
            (-2.0, true),
            (-3.0, false),
            (-4.0, false),
            (-2.5, true),
            (-3.5, false),
        ];
        let fit = lm_threshold_search(&scores).unwrap();
        let (t, acc) = brute_force(&scores);
        assert_eq!(fit.threshold, t);
        assert_eq!(fit.accuracy, acc);
    }

    #[test]
    fn separable_threshold_is_in_the_gap() {
        // funny = low likelihood
        let scores = [(-9.0, true), (-8.0, true), (-3.0, false), (-2.0, false)];
        let fit = lm_threshold_search(&scores).unwrap();
        assert_eq!(fit.accuracy, 1.0);
        assert!(fit.threshold > -8.0 && fit.threshold < -3.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            lm_threshold_search(&[(-1.0, true), (-2.0, true)]),
            Err(Error::SingleClass)
        ));
        assert!(lm_threshold_search(&[]).is_err());
    }

    proptest! {
        #[test]
        fn search_equals_exhaustive_scan(
            scores in prop::collection::vec((-20i32..0, any::<bool>()), 2..40)
        ) {
            let scores: Vec<(f64, bool)> =
                scores.into_iter().map(|(s, l)| (s as f64 / 2.0, l)).collect();
            prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
            let fit = lm_threshold_search(&scores).unwrap();
            let (t, acc) = brute_force(&scores);
            prop_assert_eq!(fit.threshold, t);
            prop_assert_eq!(fit.accuracy, acc);
            prop_assert!(fit.accuracy >= 0.5);
        }
    }

    #[test]
    fn tie_goes_to_first() {
        assert_eq!(pair_from_scores(-3.0, -3.0), PairPrediction { index: 0, tie: true });
        assert_eq!(pair_from_scores(-3.0, -5.0), PairPrediction { index: 1, tie: false });
        assert_eq!(pair_from_scores(-6.0, -5.0), PairPrediction { index: 0, tie: false });
        let fx = TinyModels::new();
        let lm = CausalLm::load(&fx.cache, TinyModels::LM).unwrap();
        let p = lm_pair_predict(&lm, "city opens new art jail", "city opens new art jail").unwrap();
        assert_eq!(p, PairPrediction { index: 0, tie: true });
    }

    #[test]
    fn logprob_properties() {
        let fx = TinyModels::new();
        let lm = CausalLm::load(&fx.cache, TinyModels::LM).unwrap();
        let short = lm.sentence_logprob("city opens new art").unwrap();
        let long = lm.sentence_logprob("city opens new art jail").unwrap();
        assert!(short < 0.0);
        assert!(long <= short);
        assert!(matches!(lm.sentence_logprob("  "), Err(Error::EmptySentence)));
        let words = word_tokenize("city opens new art jail");
        let per_word: f64 = lm.word_logprobs(&words).unwrap().iter().sum();
        assert!((per_word - long).abs() < 1e-6);
        let per_token = lm.sentence_score("city opens new art jail", LmNormalization::PerToken).unwrap();
        let n = lm.token_logprobs(&words).unwrap().len() as f64;
        assert!((per_token * n - long).abs() < 1e-6);
    }

    #[test]
    fn ranking_matches_token_by_token_scoring() {
        // Second scoring path: one forward pass per prefix, reading only the
        // last position's next-token distribution.
        let fx = TinyModels::new();
        let lm = CausalLm::load(&fx.cache, TinyModels::LM).unwrap();
        let sentences = [
            "tiger woods announces return to sex",
            "tiger woods announces return to golf",
            "city opens new art jail",
            "city opens new art museum",
            "bp ready to resume oil spilling",
            "bp ready to resume oil drilling",
            "family takes rare trip to the mall",
            "family takes rare trip to home country",
            "general motors reports record sales of new disposable car",
            "general motors reports record sales of new car",
        ];
        let mut fast = Vec::new();
        let mut slow = Vec::new();
        for s in sentences {
            fast.push(lm.sentence_logprob(s).unwrap());
            let ids = lm.layout(&word_tokenize(s)).unwrap().ids;
            let mut total = 0.0;
            for k in 1..ids.len() {
                let logits = lm.model().logits(&ids[..k]).unwrap().to_vec2::<f32>().unwrap();
                let last = &logits[k - 1];
                let max = last.iter().cloned().fold(f32::MIN, f32::max) as f64;
                let z: f64 = last.iter().map(|&x| (x as f64 - max).exp()).sum();
                total += last[ids[k] as usize] as f64 - max - z.ln();
            }
            slow.push(total);
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            idx
        };
        assert_eq!(rank(&fast), rank(&slow));
    }
}
