//! Accuracies, bootstrap confidence intervals and paired t-tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{filter, make_instances, Corpus, HumorType, PairFilter, Role, Setup};
use crate::models::{lm_threshold_search, CausalLm, LmNormalization, ModelVariant, WordInput};
use crate::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const CI_LEVEL: f64 = 0.99;
/// Significance threshold for every reported test.
pub const ALPHA: f64 = 0.01;
/// Jaccard-distance thresholds of the accuracy-versus-edit-size curve.
pub const JACCARD_GRID: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

/// Fraction of `(predicted, gold)` pairs that agree.
pub fn accuracy(predictions: &[(bool, bool)]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions".into()));
    }
    let hits = predictions.iter().filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Percentile bootstrap interval of the mean of `values`.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap sample".into()));
    }
    if resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!("bad bootstrap settings: {resamples} resamples, level {level}")));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&means, tail), quantile(&means, 1.0 - tail)))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// Serialized as null when undefined.
    #[serde(deserialize_with = "nan_if_null")]
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value; `None` when the differences have zero variance.
    pub p_value: Option<f64>,
    pub mean_difference: f64,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl TTest {
    pub fn zero_variance(&self) -> bool {
        self.p_value.is_none()
    }

    pub fn significant(&self) -> bool {
        self.p_value.is_some_and(|p| p < ALPHA)
    }
}

fn two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * dist.sf(t.abs())
}

/// Two-sided paired t-test on item-aligned samples.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("paired t-test needs at least 2 items".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var <= f64::EPSILON * mean.abs().max(1.0) * 1e-6 || var == 0.0 {
        return Ok(TTest { t: f64::NAN, df, p_value: None, mean_difference: mean });
    }
    let t = mean / (var / n).sqrt();
    Ok(TTest { t, df, p_value: Some(two_sided(t, df)), mean_difference: mean })
}

/// Two-sided Welch t-test for independent samples.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::EmptyInput("welch t-test needs at least 2 items per sample".into()));
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (n, m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok(TTest { t: f64::NAN, df: na + nb - 2.0, p_value: None, mean_difference: ma - mb });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    Ok(TTest { t, df, p_value: Some(two_sided(t, df)), mean_difference: ma - mb })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Stratum {
    HumorType(HumorType),
    Jaccard(f64),
    Subset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stratum: Option<Stratum>,
}

impl MetricsReport {
    /// Accuracy with a bootstrap interval from per-item correctness.
    pub fn from_correct(name: &str, correct: &[bool], stratum: Option<Stratum>, seed: u64) -> Result<Self> {
        let values: Vec<f64> = correct.iter().map(|&c| f64::from(u8::from(c))).collect();
        let point = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let (lo, hi) = bootstrap_ci(&values, BOOTSTRAP_RESAMPLES, CI_LEVEL, seed)?;
        Ok(MetricsReport {
            name: name.to_string(),
            point_estimate: point,
            // percentile bounds can miss a mean sitting on a rounding edge
            ci_low: lo.min(point),
            ci_high: hi.max(point),
            n: values.len(),
            stratum,
        })
    }
}

/// Correctness of one classified item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub pair_id: String,
    /// Role of the (first) classified sentence.
    pub role: Role,
    pub correct: bool,
}

/// Classifies every instance of `corpus` with a trained variant.
pub fn variant_outcomes(variant: &ModelVariant, corpus: &Corpus, seed: u64) -> Result<Vec<Outcome>> {
    let instances = make_instances(corpus, variant.config.setup, seed);
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(32) {
        let batch: Vec<Vec<WordInput>> = chunk
            .iter()
            .map(|i| i.texts.iter().map(|t| WordInput::new(t)).collect())
            .collect();
        let probs = variant.predict_batch(&batch)?;
        for (inst, p) in chunk.iter().zip(probs) {
            out.push(Outcome {
                pair_id: inst.pair_id.clone(),
                role: inst.role,
                correct: (p > 0.5) == inst.label,
            });
        }
    }
    Ok(out)
}

/// Pair-setup language-model baseline: the less likely sentence is funny.
pub fn lm_pair_outcomes(lm: &CausalLm, corpus: &Corpus, norm: LmNormalization) -> Result<Vec<Outcome>> {
    corpus
        .pairs
        .iter()
        .map(|p| {
            let f = lm.sentence_score(&p.funny_text, norm)?;
            let s = lm.sentence_score(&p.serious_text, norm)?;
            // ties go to the first presented sentence
            let funny_first = p.presentation_label;
            let predicted_first = crate::models::lm::pair_from_scores(
                if funny_first { f } else { s },
                if funny_first { s } else { f },
            )
            .index
                == 0;
            Ok(Outcome {
                pair_id: p.pair_id.clone(),
                role: if funny_first { Role::Funny } else { Role::Serious },
                correct: predicted_first == funny_first,
            })
        })
        .collect()
}

fn lm_scores(lm: &CausalLm, corpus: &Corpus, norm: LmNormalization) -> Result<Vec<(String, f64, bool)>> {
    let mut out = Vec::with_capacity(2 * corpus.len());
    for p in &corpus.pairs {
        out.push((p.pair_id.clone(), lm.sentence_score(&p.funny_text, norm)?, true));
        out.push((p.pair_id.clone(), lm.sentence_score(&p.serious_text, norm)?, false));
    }
    Ok(out)
}

/// Single-setup language-model baseline: the likelihood threshold is fitted
/// on `fit` and applied to `eval`. Returns the threshold with the outcomes.
pub fn lm_single_outcomes(
    lm: &CausalLm,
    fit: &Corpus,
    eval: &Corpus,
    norm: LmNormalization,
) -> Result<(f64, Vec<Outcome>)> {
    let train: Vec<(f64, bool)> = lm_scores(lm, fit, norm)?.into_iter().map(|(_, s, l)| (s, l)).collect();
    let threshold = lm_threshold_search(&train)?.threshold;
    let outcomes = lm_scores(lm, eval, norm)?
        .into_iter()
        .map(|(id, s, funny)| Outcome {
            pair_id: id,
            role: if funny { Role::Funny } else { Role::Serious },
            correct: (s < threshold) == funny,
        })
        .collect();
    Ok((threshold, outcomes))
}

/// Mean correctness per pair, so models evaluated in either setup can be
/// compared item by item.
pub fn per_pair_scores(outcomes: &[Outcome]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for o in outcomes {
        let e = acc.entry(o.pair_id.clone()).or_default();
        e.0 += f64::from(u8::from(o.correct));
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Paired t-test between two models' per-pair scores over their shared pairs.
pub fn compare_models(a: &[Outcome], b: &[Outcome]) -> Result<TTest> {
    let a = per_pair_scores(a);
    let b = per_pair_scores(b);
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .iter()
        .filter_map(|(k, v)| b.get(k).map(|w| (*v, *w)))
        .unzip();
    paired_t_test(&x, &y)
}

fn restrict<'a>(outcomes: &'a [Outcome], corpus: &Corpus) -> Vec<&'a Outcome> {
    let ids: std::collections::BTreeSet<&str> = corpus.pairs.iter().map(|p| p.pair_id.as_str()).collect();
    outcomes.iter().filter(|o| ids.contains(o.pair_id.as_str())).collect()
}

/// Result for one stratum; `report` is absent when the stratum is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumResult {
    pub stratum: Stratum,
    pub pairs: usize,
    pub report: Option<MetricsReport>,
}

fn stratum_result(name: &str, outcomes: &[Outcome], subset: &Corpus, stratum: Stratum, seed: u64) -> Result<StratumResult> {
    let picked: Vec<bool> = restrict(outcomes, subset).iter().map(|o| o.correct).collect();
    let report = if picked.is_empty() {
        log::warn!("{name}: stratum {stratum:?} is empty");
        None
    } else {
        Some(MetricsReport::from_correct(name, &picked, Some(stratum.clone()), seed)?)
    };
    Ok(StratumResult { stratum, pairs: subset.len(), report })
}

/// One accuracy per humor type, over that type's annotated pairs.
pub fn accuracy_by_type(name: &str, outcomes: &[Outcome], corpus: &Corpus, seed: u64) -> Result<Vec<StratumResult>> {
    HumorType::ALL
        .iter()
        .map(|&t| {
            let subset = filter(corpus, &[PairFilter::HumorType(t)]);
            stratum_result(name, outcomes, &subset, Stratum::HumorType(t), seed)
        })
        .collect()
}

/// Accuracy over pairs whose Jaccard distance exceeds each threshold.
pub fn accuracy_vs_jaccard(
    name: &str,
    outcomes: &[Outcome],
    corpus: &Corpus,
    thresholds: &[f64],
    seed: u64,
) -> Result<Vec<StratumResult>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("jaccard thresholds must be ascending".into()));
    }
    thresholds
        .iter()
        .map(|&x| {
            let subset = if x == 0.0 {
                corpus.subset(|_| true)
            } else {
                filter(corpus, &[PairFilter::MinJaccard(x)])
            };
            stratum_result(name, outcomes, &subset, Stratum::Jaccard(x), seed)
        })
        .collect()
}

/// Compares accuracy on pairs above a Jaccard threshold with the pairs at
/// or below it. The two groups are disjoint, so a Welch test is used.
pub fn jaccard_shift_test(outcomes: &[Outcome], corpus: &Corpus, threshold: f64) -> Result<TTest> {
    let scores = per_pair_scores(outcomes);
    let above = filter(corpus, &[PairFilter::MinJaccard(threshold)]);
    let ids: std::collections::BTreeSet<&str> = above.pairs.iter().map(|p| p.pair_id.as_str()).collect();
    let (hi, lo): (Vec<(&String, &f64)>, Vec<_>) = scores.iter().partition(|(k, _)| ids.contains(k.as_str()));
    welch_t_test(
        &hi.into_iter().map(|x| *x.1).collect::<Vec<_>>(),
        &lo.into_iter().map(|x| *x.1).collect::<Vec<_>>(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subset {
    Full,
    Hq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub setup: Setup,
    pub subset: Subset,
    pub report: Option<MetricsReport>,
}

/// Full-test and high-quality-subset rows for one model.
pub fn table_rows(model: &str, setup: Setup, outcomes: &[Outcome], test: &Corpus, seed: u64) -> Result<[TableRow; 2]> {
    let full: Vec<bool> = restrict(outcomes, test).iter().map(|o| o.correct).collect();
    let hq_corpus = test.subset(|p| test.is_hq(&p.pair_id));
    let hq: Vec<bool> = restrict(outcomes, &hq_corpus).iter().map(|o| o.correct).collect();
    let row = |subset, items: &[bool]| -> Result<TableRow> {
        Ok(TableRow {
            model: model.to_string(),
            setup,
            subset,
            report: if items.is_empty() {
                None
            } else {
                Some(MetricsReport::from_correct(model, items, Some(Stratum::Subset(format!("{subset:?}").to_lowercase())), seed)?)
            },
        })
    };
    Ok([row(Subset::Full, &full)?, row(Subset::Hq, &hq)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Bernoulli, Distribution, Normal};

    fn synthetic_test_split() -> Corpus {
        let tsv = crate::models::testing::synthetic_corpus_tsv(0, 0, 120, 5);
        let (c, _) = crate::corpus::load_corpus_from_reader(tsv.as_bytes(), &Default::default()).unwrap();
        c.split(crate::corpus::Split::Test)
    }

    fn outcomes_for(c: &Corpus, correct: impl Fn(usize) -> bool) -> Vec<Outcome> {
        c.pairs
            .iter()
            .enumerate()
            .map(|(i, p)| Outcome { pair_id: p.pair_id.clone(), role: Role::Funny, correct: correct(i) })
            .collect()
    }

    #[test]
    fn jaccard_zero_is_full_and_subsets_shrink() {
        let c = synthetic_test_split();
        let o = outcomes_for(&c, |i| i % 3 != 0);
        let res = accuracy_vs_jaccard("m", &o, &c, &JACCARD_GRID, 1).unwrap();
        let full = o.iter().filter(|x| x.correct).count() as f64 / o.len() as f64;
        assert_eq!(res[0].pairs, c.len());
        assert!((res[0].report.as_ref().unwrap().point_estimate - full).abs() < 1e-12);
        assert!(res.windows(2).all(|w| w[1].pairs <= w[0].pairs));
    }

    #[test]
    fn single_correct_pair_type_scores_one() {
        let c = synthetic_test_split();
        let t = c.pairs.iter().find_map(|p| p.humor_type).unwrap();
        let first = c.pairs.iter().position(|p| p.humor_type == Some(t)).unwrap();
        let keep = c.subset(|p| p.humor_type != Some(t) || p.pair_id == c.pairs[first].pair_id);
        let o = outcomes_for(&keep, |i| keep.pairs[i].humor_type == Some(t));
        let res = accuracy_by_type("m", &o, &keep, 1).unwrap();
        let cell = res.iter().find(|r| r.stratum == Stratum::HumorType(t)).unwrap();
        assert_eq!(cell.pairs, 1);
        assert_eq!(cell.report.as_ref().unwrap().point_estimate, 1.0);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[(true, true); 4]).unwrap(), 1.0);
        let alt: Vec<(bool, bool)> = (0..10).map(|i| (i % 2 == 0, true)).collect();
        assert_eq!(accuracy(&alt).unwrap(), 0.5);
        let seven = [(true, true), (false, false), (true, false), (true, true), (false, true), (false, false), (true, true)];
        assert!((accuracy(&seven).unwrap() - 5.0 / 7.0).abs() < 1e-15);
        assert!(accuracy(&[]).is_err());
        // constant predictions over a balanced set
        let balanced: Vec<(bool, bool)> = (0..20).map(|i| (true, i % 2 == 0)).collect();
        assert_eq!(accuracy(&balanced).unwrap(), 0.5);
    }

    #[test]
    fn bootstrap_constant_and_determinism() {
        assert_eq!(bootstrap_ci(&[1.0; 50], 1000, 0.99, 1).unwrap(), (1.0, 1.0));
        assert_eq!(bootstrap_ci(&[0.0; 50], 1000, 0.99, 1).unwrap(), (0.0, 0.0));
        let v: Vec<f64> = (0..40).map(|i| f64::from(i % 3 == 0)).collect();
        assert_eq!(bootstrap_ci(&v, 500, 0.99, 9).unwrap(), bootstrap_ci(&v, 500, 0.99, 9).unwrap());
    }

    #[test]
    fn bootstrap_width_matches_normal_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = Bernoulli::new(0.7).unwrap();
        let v: Vec<f64> = (0..1000).map(|_| f64::from(u8::from(b.sample(&mut rng)))).collect();
        let p = v.iter().sum::<f64>() / 1000.0;
        let analytic = 2.0 * 2.575_829 * (p * (1.0 - p) / 1000.0).sqrt();
        let (lo, hi) = bootstrap_ci(&v, 1000, 0.99, 3).unwrap();
        let ratio = (hi - lo) / analytic;
        assert!((0.75..=1.25).contains(&ratio), "ratio {ratio}");
    }

    /// Second t-test path: sums of squares for the statistic and Simpson
    /// integration of the t density for the tail.
    fn oracle_p(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (mut s, mut ss) = (0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            s += x - y;
            ss += (x - y) * (x - y);
        }
        let sd = ((ss - s * s / n) / (n - 1.0)).sqrt();
        let t = (s / n) / (sd / n.sqrt());
        let nu = n - 1.0;
        let ln_c = statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln();
        let dens = |x: f64| (ln_c - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp();
        let steps = 20_000;
        let h = t.abs() / steps as f64;
        let mut area = dens(0.0) + dens(t.abs());
        for k in 1..steps {
            area += dens(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * area * h / 3.0
    }

    #[test]
    fn t_test_agrees_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for shift in [0.0, 0.1, 0.3] {
            let a: Vec<f64> = (0..40).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = a.iter().map(|x| x - shift + 0.5 * normal.sample(&mut rng)).collect();
            let p = paired_t_test(&a, &b).unwrap().p_value.unwrap();
            assert!((p - oracle_p(&a, &b)).abs() < 1e-6, "{p}");
        }
    }

    #[test]
    fn shifted_samples_are_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let b: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.5 + noise.sample(&mut rng)).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.p_value.unwrap() < 1e-6);
        assert!(r.significant());
    }

    #[test]
    fn identical_samples_flagged() {
        let a = [1.0, 2.0, 3.0];
        let r = paired_t_test(&a, &a).unwrap();
        assert!(r.zero_variance());
        assert!(!r.significant());
        assert!(paired_t_test(&a, &a[..2]).is_err());
        let back: TTest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert!(back.zero_variance() && back.t.is_nan());
    }

    #[test]
    fn null_false_positive_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let hits = (0..1000)
            .filter(|_| {
                let a: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
                let b: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
                paired_t_test(&a, &b).unwrap().significant()
            })
            .count();
        let rate = hits as f64 / 1000.0;
        assert!((rate - 0.01).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn welch_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| f64::from(i % 5) + 3.0).collect();
        let b: Vec<f64> = (0..60).map(|i| f64::from(i % 7)).collect();
        assert!(welch_t_test(&a, &b).unwrap().significant());
    }

    proptest! {
        #[test]
        fn ci_contains_point(bits in prop::collection::vec(any::<bool>(), 1..200), seed in 0u64..50) {
            let r = MetricsReport::from_correct("m", &bits, None, seed).unwrap();
            prop_assert!(r.ci_low <= r.point_estimate && r.point_estimate <= r.ci_high);
            prop_assert!(r.ci_low >= 0.0 && r.ci_high <= 1.0);
        }
    }
}
