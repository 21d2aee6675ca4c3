//! The aligned funny/serious pair corpus: loading, alignment, slicing.

mod alignment;
mod archive;
mod instances;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use alignment::{align_tokens, TokenAlignment};
pub use archive::{read_archive, write_archive};
pub use instances::{
    filter, jaccard_distance, jaccard_distance_tokens, make_instances, presentation_flip,
    Instance, PairFilter, Role, Setup,
};
pub use tokenize::word_tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" | "dev" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// The seven opposition dimensions used to annotate part of the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumorType {
    NormalAbnormal,
    PossibleImpossible,
    NonViolenceViolence,
    GoodBadIntentions,
    ReasonableAbsurd,
    HighLowStature,
    NonObsceneObscene,
}

impl HumorType {
    pub const ALL: [HumorType; 7] = [
        HumorType::NormalAbnormal,
        HumorType::PossibleImpossible,
        HumorType::NonViolenceViolence,
        HumorType::GoodBadIntentions,
        HumorType::ReasonableAbsurd,
        HumorType::HighLowStature,
        HumorType::NonObsceneObscene,
    ];

    pub fn label(self) -> &'static str {
        match self {
            HumorType::NormalAbnormal => "normal/abnormal",
            HumorType::PossibleImpossible => "possible/impossible",
            HumorType::NonViolenceViolence => "non-violence/violence",
            HumorType::GoodBadIntentions => "good/bad intentions",
            HumorType::ReasonableAbsurd => "reasonable/absurd",
            HumorType::HighLowStature => "high/low stature",
            HumorType::NonObsceneObscene => "non-obscene/obscene",
        }
    }
}

impl fmt::Display for HumorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for HumorType {
    type Err = String;

    /// Accepts the display label, the snake_case name, or the 1-based index.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        let found = match key.as_str() {
            "normalabnormal" | "1" => HumorType::NormalAbnormal,
            "possibleimpossible" | "2" => HumorType::PossibleImpossible,
            "nonviolenceviolence" | "3" => HumorType::NonViolenceViolence,
            "goodbadintentions" | "goodbadintention" | "4" => HumorType::GoodBadIntentions,
            "reasonableabsurd" | "reasonableabsurdresponse" | "5" => HumorType::ReasonableAbsurd,
            "highlowstature" | "6" => HumorType::HighLowStature,
            "nonobsceneobscene" | "7" => HumorType::NonObsceneObscene,
            _ => return Err(format!("unknown humor type {s:?}")),
        };
        Ok(found)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub pair_id: String,
    pub funny_text: String,
    pub serious_text: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_rating: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub humor_type: Option<HumorType>,
    /// Whether the funny sentence is shown first under the corpus ordering seed.
    #[serde(default)]
    pub presentation_label: bool,
}

/// Column names of the input table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub pair_id: String,
    pub funny: String,
    pub serious: String,
    pub split: String,
    pub quality: String,
    pub humor_type: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            pair_id: "pair_id".into(),
            funny: "funny".into(),
            serious: "serious".into(),
            split: "split".into(),
            quality: "quality".into(),
            humor_type: "humor_type".into(),
        }
    }
}

/// How the high-quality test subset is selected from quality ratings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum HqRule {
    /// Pairs whose rating equals the largest rating present in the file.
    #[default]
    MaxObserved,
    /// Pairs whose rating is at least this value.
    AtLeast(i64),
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub schema: Schema,
    pub hq_rule: HqRule,
    /// Seed of the funny-first presentation coin flips.
    pub ordering_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowDiagnostic {
    /// 1-based line number in the input file (header is line 1).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub split_counts: BTreeMap<Split, usize>,
    pub hq_count: usize,
    pub type_counts: BTreeMap<HumorType, usize>,
    pub widened_alignments: usize,
    pub rejected: Vec<RowDiagnostic>,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for split in [Split::Train, Split::Val, Split::Test] {
            writeln!(
                f,
                "{split:<6} {:>7}",
                self.split_counts.get(&split).copied().unwrap_or(0)
            )?;
        }
        writeln!(f, "hq     {:>7}", self.hq_count)?;
        let typed: usize = self.type_counts.values().sum();
        writeln!(f, "typed  {typed:>7}")?;
        for (t, n) in &self.type_counts {
            writeln!(f, "  {:<24} {n:>5}", t.label())?;
        }
        if self.widened_alignments > 0 {
            writeln!(f, "widened alignments: {}", self.widened_alignments)?;
        }
        if !self.rejected.is_empty() {
            writeln!(f, "rejected rows: {}", self.rejected.len())?;
        }
        Ok(())
    }
}

/// A validated corpus with one alignment per pair. Immutable after loading.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    pub hq_ids: BTreeSet<String>,
    pub alignment_index: BTreeMap<String, TokenAlignment>,
}

impl Corpus {
    /// Builds a corpus, aligning every pair. Pairs that fail alignment are
    /// returned as errors rather than silently dropped.
    pub fn new(pairs: Vec<SentencePair>, hq_ids: BTreeSet<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut alignment_index = BTreeMap::new();
        for pair in &pairs {
            if !seen.insert(pair.pair_id.clone()) {
                return Err(Error::DuplicatePairId(pair.pair_id.clone()));
            }
            alignment_index.insert(pair.pair_id.clone(), compute_token_alignment(pair)?);
        }
        Ok(Corpus {
            pairs,
            hq_ids,
            alignment_index,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn alignment(&self, pair_id: &str) -> &TokenAlignment {
        &self.alignment_index[pair_id]
    }

    pub fn is_hq(&self, pair_id: &str) -> bool {
        self.hq_ids.contains(pair_id)
    }

    pub fn split(&self, split: Split) -> Corpus {
        self.subset(|p| p.split == split)
    }

    pub(crate) fn subset(&self, mut keep: impl FnMut(&SentencePair) -> bool) -> Corpus {
        let pairs: Vec<_> = self.pairs.iter().filter(|p| keep(p)).cloned().collect();
        let ids: BTreeSet<_> = pairs.iter().map(|p| p.pair_id.clone()).collect();
        Corpus {
            hq_ids: self.hq_ids.intersection(&ids).cloned().collect(),
            alignment_index: self
                .alignment_index
                .iter()
                .filter(|(k, _)| ids.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            pairs,
        }
    }

    pub fn report(&self) -> LoadReport {
        let mut report = LoadReport::default();
        for p in &self.pairs {
            *report.split_counts.entry(p.split).or_default() += 1;
            if let Some(t) = p.humor_type {
                *report.type_counts.entry(t).or_default() += 1;
            }
        }
        report.hq_count = self.hq_ids.len();
        report.widened_alignments = self.alignment_index.values().filter(|a| a.widened).count();
        report
    }

    /// Word vocabulary of the corpus, sorted, used e.g. for random replacement.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .alignment_index
            .values()
            .flat_map(|a| a.funny_tokens.iter().chain(&a.serious_tokens))
            .collect();
        set.into_iter().cloned().collect()
    }
}

/// Aligns a pair with the word-level tokenizer.
pub fn compute_token_alignment(pair: &SentencePair) -> Result<TokenAlignment> {
    align_tokens(
        word_tokenize(&pair.funny_text),
        word_tokenize(&pair.serious_text),
    )
}

/// Loads a tab-separated pair table.
///
/// Structural problems (missing columns, wrong field counts, duplicate ids)
/// are errors. Rows whose content violates a pair invariant (bad split,
/// unknown humor type, identical sentences) are skipped and listed in the
/// returned report.
pub fn load_corpus(path: &Path, options: &LoadOptions) -> Result<(Corpus, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_corpus_from_reader(file, options)
}

pub fn load_corpus_from_reader<R: std::io::Read>(
    reader: R,
    options: &LoadOptions,
) -> Result<(Corpus, LoadReport)> {
    let schema = &options.schema;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::NoPairs);
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| Error::MalformedRow {
            row: 1,
            reason: format!("missing required column {name:?}"),
        })
    };
    let id_col = required(&schema.pair_id)?;
    let funny_col = required(&schema.funny)?;
    let serious_col = required(&schema.serious)?;
    let split_col = required(&schema.split)?;
    let quality_col = col(&schema.quality);
    let type_col = col(&schema.humor_type);

    let mut pairs = Vec::new();
    let mut alignments = BTreeMap::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let pair_id = field(id_col).to_string();
        if pair_id.is_empty() {
            rejected.push(RowDiagnostic {
                row,
                reason: "empty pair_id".into(),
            });
            continue;
        }
        if !seen.insert(pair_id.clone()) {
            return Err(Error::DuplicatePairId(pair_id));
        }
        let parsed = parse_row(
            pair_id,
            field(funny_col),
            field(serious_col),
            field(split_col),
            quality_col.map(field).unwrap_or(""),
            type_col.map(field).unwrap_or(""),
        );
        match parsed.and_then(|pair| {
            compute_token_alignment(&pair)
                .map(|a| (pair, a))
                .map_err(|e| e.to_string())
        }) {
            Ok((pair, alignment)) => {
                alignments.insert(pair.pair_id.clone(), alignment);
                pairs.push(pair);
            }
            Err(reason) => rejected.push(RowDiagnostic { row, reason }),
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    for (row, reason) in rejected.iter().map(|d| (d.row, &d.reason)) {
        log::warn!("rejected row {row}: {reason}");
    }

    for pair in &mut pairs {
        pair.presentation_label = presentation_flip(options.ordering_seed, &pair.pair_id);
    }
    let hq_threshold = match options.hq_rule {
        HqRule::MaxObserved => pairs.iter().filter_map(|p| p.quality_rating).max(),
        HqRule::AtLeast(v) => Some(v),
    };
    let hq_ids = pairs
        .iter()
        .filter(|p| p.split == Split::Test)
        .filter(|p| matches!((p.quality_rating, hq_threshold), (Some(q), Some(t)) if q >= t))
        .map(|p| p.pair_id.clone())
        .collect();
    let corpus = Corpus {
        pairs,
        hq_ids,
        alignment_index: alignments,
    };
    let mut report = corpus.report();
    report.rejected = rejected;
    Ok((corpus, report))
}

fn parse_row(
    pair_id: String,
    funny: &str,
    serious: &str,
    split: &str,
    quality: &str,
    humor_type: &str,
) -> std::result::Result<SentencePair, String> {
    if funny.is_empty() || serious.is_empty() {
        return Err("empty sentence".into());
    }
    if funny == serious {
        return Err("funny and serious texts are identical".into());
    }
    let split = split.parse::<Split>()?;
    let quality_rating = match quality {
        "" => None,
        q => Some(
            q.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0)
                .map(|v| v as i64)
                .ok_or_else(|| format!("quality {q:?} is not an integer"))?,
        ),
    };
    let humor_type = match humor_type {
        "" => None,
        t => Some(t.parse::<HumorType>()?),
    };
    Ok(SentencePair {
        pair_id,
        funny_text: funny.to_string(),
        serious_text: serious.to_string(),
        split,
        quality_rating,
        humor_type,
        presentation_label: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<(Corpus, LoadReport)> {
        load_corpus_from_reader(text.as_bytes(), &LoadOptions::default())
    }

    const SMALL: &str = "pair_id\tfunny\tserious\tsplit\tquality\thumor_type\n\
        1\ttiger woods announces return to sex\ttiger woods announces return to golf\ttest\t3\tnon-obscene/obscene\n\
        2\tcity opens new art jail\tcity opens new art museum\ttest\t2\tpossible/impossible\n\
        3\tbp ready to resume oil spilling\tbp ready to resume oil drilling\ttrain\t\t\n\
        4\tfamily takes rare trip to the mall\tfamily takes rare trip to home country\tval\t3\t\n";

    #[test]
    fn loads_small_table() {
        let (corpus, report) = load(SMALL).unwrap();
        assert_eq!(corpus.len(), 4);
        assert_eq!(report.split_counts[&Split::Test], 2);
        assert_eq!(report.split_counts[&Split::Train], 1);
        assert_eq!(report.split_counts[&Split::Val], 1);
        // only test-split pairs with the top rating are HQ
        assert_eq!(corpus.hq_ids, BTreeSet::from(["1".to_string()]));
        assert_eq!(report.type_counts.values().sum::<usize>(), 2);
        assert_eq!(corpus.alignment_index.len(), 4);
    }

    #[test]
    fn empty_file_is_no_pairs() {
        assert!(matches!(load(""), Err(Error::NoPairs)));
        assert!(matches!(
            load("pair_id\tfunny\tserious\tsplit\n"),
            Err(Error::NoPairs)
        ));
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = "pair_id\tfunny\tserious\tsplit\n\
                    a\tx y\tx z\ttrain\n\
                    dup\tp q\tp r\ttrain\n\
                    dup\tm n\tm o\ttest\n";
        match load(text) {
            Err(Error::DuplicatePairId(id)) => assert_eq!(id, "dup"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_rows_are_rejected_with_line_numbers() {
        let text = "pair_id\tfunny\tserious\tsplit\thumor_type\n\
                    a\tx y\tx z\ttrain\t\n\
                    b\tsame\tsame\ttrain\t\n\
                    c\tp q\tp r\tholdout\t\n\
                    d\tp q\tp r\ttest\tsilly\n\
                    e\tCase\tcase\ttest\t\n";
        let (corpus, report) = load(text).unwrap();
        assert_eq!(corpus.len(), 1);
        let rows: Vec<usize> = report.rejected.iter().map(|d| d.row).collect();
        assert_eq!(rows, vec![3, 4, 5, 6]);
    }

    #[test]
    fn wrong_field_count_is_malformed() {
        let text = "pair_id\tfunny\tserious\tsplit\na\tx y\ttrain\n";
        assert!(matches!(load(text), Err(Error::MalformedRow { row: 2, .. })));
    }

    #[test]
    fn missing_column_is_malformed() {
        let text = "pair_id\tfunny\tsplit\na\tx\ttrain\n";
        assert!(matches!(load(text), Err(Error::MalformedRow { row: 1, .. })));
    }

    #[test]
    fn humor_type_spellings() {
        for t in HumorType::ALL {
            assert_eq!(t.label().parse::<HumorType>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json.trim_matches('"').parse::<HumorType>().unwrap(), t);
        }
        assert_eq!("7".parse::<HumorType>().unwrap(), HumorType::NonObsceneObscene);
    }

    #[test]
    fn custom_schema_and_hq_rule() {
        let text = "id\tf\ts\tpart\tq\n\
                    a\tx y\tx z\ttest\t5\n\
                    b\tp q\tp r\ttest\t4\n";
        let options = LoadOptions {
            schema: Schema {
                pair_id: "id".into(),
                funny: "f".into(),
                serious: "s".into(),
                split: "part".into(),
                quality: "q".into(),
                humor_type: "type".into(),
            },
            hq_rule: HqRule::AtLeast(4),
            ordering_seed: 0,
        };
        let (corpus, _) = load_corpus_from_reader(text.as_bytes(), &options).unwrap();
        assert_eq!(corpus.hq_ids.len(), 2);
    }
}
