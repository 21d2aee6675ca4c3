use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{word_tokenize, Corpus, HumorType, SentencePair, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Single,
    Paired,
}

/// Which sentence of its pair a single-sentence instance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Funny,
    Serious,
}

/// One classification example.
///
/// Single-sentence instances carry one text; paired instances carry two,
/// and `label` says whether the first of them is the funny one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub pair_id: String,
    pub texts: Vec<String>,
    pub label: bool,
    /// Role of `texts[0]`.
    pub role: Role,
}

/// Seed-derived coin flip deciding whether a pair is presented funny-first.
///
/// Hash based, so a pair's flip does not depend on which other pairs are
/// present or on their order.
pub fn presentation_flip(seed: u64, pair_id: &str) -> bool {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(pair_id.as_bytes());
    h.finalize()[0] & 1 == 1
}

pub fn make_instances(corpus: &Corpus, setup: Setup, seed: u64) -> Vec<Instance> {
    match setup {
        Setup::Single => corpus
            .pairs
            .iter()
            .flat_map(|p| {
                [
                    Instance {
                        pair_id: p.pair_id.clone(),
                        texts: vec![p.funny_text.clone()],
                        label: true,
                        role: Role::Funny,
                    },
                    Instance {
                        pair_id: p.pair_id.clone(),
                        texts: vec![p.serious_text.clone()],
                        label: false,
                        role: Role::Serious,
                    },
                ]
            })
            .collect(),
        Setup::Paired => corpus
            .pairs
            .iter()
            .map(|p| {
                let funny_first = presentation_flip(seed, &p.pair_id);
                let (texts, role) = if funny_first {
                    (vec![p.funny_text.clone(), p.serious_text.clone()], Role::Funny)
                } else {
                    (vec![p.serious_text.clone(), p.funny_text.clone()], Role::Serious)
                };
                Instance {
                    pair_id: p.pair_id.clone(),
                    texts,
                    label: funny_first,
                    role,
                }
            })
            .collect(),
    }
}

/// Jaccard distance between two token sets.
pub fn jaccard_distance_tokens<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let a: BTreeSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: BTreeSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(&b).count() as f64 / union as f64
}

/// Jaccard distance between the word-token sets of a pair's two sentences.
pub fn jaccard_distance(pair: &SentencePair) -> f64 {
    jaccard_distance_tokens(
        &word_tokenize(&pair.funny_text),
        &word_tokenize(&pair.serious_text),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairFilter {
    /// Jaccard distance strictly greater than the value.
    MinJaccard(f64),
    HumorType(HumorType),
    HqOnly,
    Split(Split),
}

impl PairFilter {
    fn accepts(&self, corpus: &Corpus, pair: &SentencePair) -> bool {
        match self {
            PairFilter::MinJaccard(x) => {
                let a = corpus.alignment(&pair.pair_id);
                jaccard_distance_tokens(&a.funny_tokens, &a.serious_tokens) > *x
            }
            PairFilter::HumorType(t) => pair.humor_type == Some(*t),
            PairFilter::HqOnly => corpus.is_hq(&pair.pair_id),
            PairFilter::Split(s) => pair.split == *s,
        }
    }
}

/// Keeps the pairs accepted by every filter. An empty result is legal and
/// logged.
pub fn filter(corpus: &Corpus, filters: &[PairFilter]) -> Corpus {
    let out = corpus.subset(|p| filters.iter().all(|f| f.accepts(corpus, p)));
    if out.is_empty() {
        log::info!("filter {filters:?} selected no pairs");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn pair(id: &str, f: &str, s: &str, split: Split, t: Option<HumorType>) -> SentencePair {
        SentencePair {
            pair_id: id.into(),
            funny_text: f.into(),
            serious_text: s.into(),
            split,
            quality_rating: None,
            humor_type: t,
            presentation_label: false,
        }
    }

    fn toy(n: usize) -> Corpus {
        let pairs = (0..n)
            .map(|i| {
                pair(
                    &format!("p{i}"),
                    &format!("w{i} a b c funny{i}"),
                    &format!("w{i} a b c serious{i}"),
                    Split::Test,
                    None,
                )
            })
            .collect();
        Corpus::new(pairs, BTreeSet::new()).unwrap()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard_distance_tokens(&["a", "b"], &["b", "a"]), 0.0);
        assert_eq!(jaccard_distance_tokens(&["a", "b"], &["c", "d"]), 1.0);
        let d = jaccard_distance_tokens(&["a", "b", "c", "d"], &["a", "b", "c", "e"]);
        assert!((d - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_instances_are_balanced() {
        let corpus = toy(25);
        let inst = make_instances(&corpus, Setup::Single, 1);
        assert_eq!(inst.len(), 50);
        assert_eq!(inst.iter().filter(|i| i.label).count(), 25);
    }

    #[test]
    fn paired_instances_are_deterministic() {
        let corpus = toy(40);
        let a = make_instances(&corpus, Setup::Paired, 7);
        let b = make_instances(&corpus, Setup::Paired, 7);
        assert_eq!(a, b);
        for inst in &a {
            let p = corpus.pairs.iter().find(|p| p.pair_id == inst.pair_id).unwrap();
            let first_is_funny = inst.texts[0] == p.funny_text;
            assert_eq!(first_is_funny, inst.label);
        }
    }

    #[test]
    fn paired_label_fraction_over_seeds() {
        // 1000 seeds x N pairs are 1000*N fair coin flips; the 99% binomial
        // band for the pooled fraction is 0.5 +- 2.576 * sqrt(0.25 / (1000 N)).
        let n = 50;
        let corpus = toy(n);
        let trials = 1000;
        let mut positives = 0usize;
        for seed in 0..trials {
            positives += make_instances(&corpus, Setup::Paired, seed)
                .iter()
                .filter(|i| i.label)
                .count();
        }
        let total = (trials as usize * n) as f64;
        let frac = positives as f64 / total;
        let band = 2.576 * (0.25 / total).sqrt();
        assert!((frac - 0.5).abs() < band, "fraction {frac} outside +-{band}");
    }

    #[test]
    fn filters_compose_as_intersection() {
        let pairs = vec![
            pair("a", "x y z", "x y q", Split::Test, Some(HumorType::ReasonableAbsurd)),
            pair("b", "x y z", "p q r", Split::Test, Some(HumorType::ReasonableAbsurd)),
            pair("c", "x y z", "p q r", Split::Train, None),
        ];
        let corpus = Corpus::new(pairs, BTreeSet::from(["b".to_string()])).unwrap();
        assert_eq!(filter(&corpus, &[PairFilter::MinJaccard(0.0)]).len(), 3);
        assert_eq!(filter(&corpus, &[PairFilter::MinJaccard(0.9)]).len(), 2);
        assert_eq!(
            filter(
                &corpus,
                &[
                    PairFilter::MinJaccard(0.9),
                    PairFilter::HumorType(HumorType::ReasonableAbsurd)
                ]
            )
            .len(),
            1
        );
        assert_eq!(filter(&corpus, &[PairFilter::HqOnly]).len(), 1);
        assert!(filter(&corpus, &[PairFilter::HqOnly, PairFilter::Split(Split::Train)]).is_empty());
    }
}
