//! One-word-at-a-time masking sweeps and their flip-rate table.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{Role, Setup, TokenAlignment};
use crate::evaluation::{paired_t_test, TTest};
use crate::models::{ModelVariant, WordInput};
use crate::{Error, Result};

/// Binary sentence classifier; `true` means funny.
pub trait Classifier {
    fn classify(&self, input: &WordInput) -> Result<bool>;
}

impl Classifier for ModelVariant {
    fn classify(&self, input: &WordInput) -> Result<bool> {
        if self.config.setup != Setup::Single {
            return Err(Error::Config("mask sweeps need a single-sentence model".into()));
        }
        Ok(self.predict_input(input)? > 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSweepResult {
    pub sentence_id: String,
    pub role: Role,
    pub words: Vec<String>,
    pub original: bool,
    /// Whether masking word `i` changed the decision.
    pub flips: Vec<bool>,
    /// Whether word `i` lies in the gold span.
    pub in_gold: Vec<bool>,
    /// Decision on the unmasked input after the sweep equals `original`.
    pub restored: bool,
}

/// Masks each word in turn (all of its subwords together) and records
/// whether the decision changes.
pub fn mask_sweep(
    classifier: &dyn Classifier,
    sentence_id: &str,
    role: Role,
    words: &[String],
    gold: Range<usize>,
) -> Result<MaskSweepResult> {
    if words.is_empty() {
        return Err(Error::EmptySentence);
    }
    let input = WordInput::from_words(words.to_vec());
    let original = classifier.classify(&input)?;
    let flips = (0..words.len())
        .map(|i| Ok(classifier.classify(&input.masking(i))? != original))
        .collect::<Result<Vec<_>>>()?;
    let restored = classifier.classify(&input)? == original;
    Ok(MaskSweepResult {
        sentence_id: sentence_id.to_string(),
        role,
        words: words.to_vec(),
        original,
        flips,
        in_gold: (0..words.len()).map(|i| gold.contains(&i)).collect(),
        restored,
    })
}

/// Sweeps both sentences of every pair.
pub fn sweep_pairs(classifier: &dyn Classifier, pairs: &[(String, &TokenAlignment)]) -> Result<Vec<MaskSweepResult>> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for (id, al) in pairs {
        out.push(mask_sweep(classifier, id, Role::Funny, &al.funny_tokens, al.funny_span.clone())?);
        out.push(mask_sweep(classifier, id, Role::Serious, &al.serious_tokens, al.serious_span.clone())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipCell {
    pub flips: usize,
    pub maskings: usize,
}

impl FlipCell {
    pub fn rate(&self) -> Option<f64> {
        (self.maskings > 0).then(|| self.flips as f64 / self.maskings as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub role: Role,
    pub modified: FlipCell,
    pub other: FlipCell,
    /// Paired test of per-sentence flip rates, modified against other words,
    /// over sentences having both kinds of word.
    pub test: Option<TTest>,
    pub tested_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipTable {
    pub funny: FlipRow,
    pub serious: FlipRow,
}

fn row(results: &[&MaskSweepResult], role: Role) -> Result<FlipRow> {
    let mut modified = FlipCell { flips: 0, maskings: 0 };
    let mut other = modified;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for r in results {
        let (mut mf, mut mn, mut of, mut on) = (0, 0, 0, 0);
        for (&flip, &gold) in r.flips.iter().zip(&r.in_gold) {
            if gold {
                mn += 1;
                mf += usize::from(flip);
            } else {
                on += 1;
                of += usize::from(flip);
            }
        }
        modified.flips += mf;
        modified.maskings += mn;
        other.flips += of;
        other.maskings += on;
        if mn > 0 && on > 0 {
            a.push(mf as f64 / mn as f64);
            b.push(of as f64 / on as f64);
        }
    }
    let test = if a.len() >= 2 { Some(paired_t_test(&a, &b)?) } else { None };
    Ok(FlipRow { role, modified, other, test, tested_sentences: a.len() })
}

/// Flip rates for modified and other words, per sentence role.
pub fn flip_rate_table(results: &[MaskSweepResult]) -> Result<FlipTable> {
    if results.is_empty() {
        return Err(Error::EmptyInput("sweep results".into()));
    }
    let of = |role| results.iter().filter(|r| r.role == role).collect::<Vec<_>>();
    Ok(FlipTable {
        funny: row(&of(Role::Funny), Role::Funny)?,
        serious: row(&of(Role::Serious), Role::Serious)?,
    })
}
