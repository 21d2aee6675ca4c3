use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Token-level diff between the two sentences of a pair.
///
/// `funny_span` and `serious_span` are the modified chunks; removing them
/// leaves the same residual sequence on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub funny_tokens: Vec<String>,
    pub serious_tokens: Vec<String>,
    pub funny_span: Range<usize>,
    pub serious_span: Range<usize>,
    /// Set when the differing region contained shared tokens, i.e. a finer
    /// diff would have produced several edit regions that were merged.
    #[serde(default)]
    pub widened: bool,
}

impl TokenAlignment {
    pub fn funny_residual(&self) -> Vec<&str> {
        residual(&self.funny_tokens, &self.funny_span)
    }

    pub fn serious_residual(&self) -> Vec<&str> {
        residual(&self.serious_tokens, &self.serious_span)
    }

    /// Checks bounds, residual equality and the "never both empty" rule.
    pub fn is_consistent(&self) -> bool {
        self.funny_span.start <= self.funny_span.end
            && self.funny_span.end <= self.funny_tokens.len()
            && self.serious_span.start <= self.serious_span.end
            && self.serious_span.end <= self.serious_tokens.len()
            && !(self.funny_span.is_empty() && self.serious_span.is_empty())
            && self.funny_residual() == self.serious_residual()
    }

    pub fn in_funny_span(&self, word: usize) -> bool {
        self.funny_span.contains(&word)
    }

    pub fn in_serious_span(&self, word: usize) -> bool {
        self.serious_span.contains(&word)
    }
}

fn residual<'a>(tokens: &'a [String], span: &Range<usize>) -> Vec<&'a str> {
    tokens[..span.start]
        .iter()
        .chain(&tokens[span.end..])
        .map(String::as_str)
        .collect()
}

/// Aligns two already-tokenized sentences with a longest-common-prefix /
/// longest-common-suffix diff. The prefix is taken greedily first, so ties
/// in edit placement resolve toward the longer prefix.
pub fn align_tokens(funny: Vec<String>, serious: Vec<String>) -> Result<TokenAlignment> {
    if funny.is_empty() || serious.is_empty() {
        return Err(Error::EmptySentence);
    }
    if funny == serious {
        return Err(Error::IdenticalSentences(funny.join(" ")));
    }
    let prefix = funny
        .iter()
        .zip(&serious)
        .take_while(|(a, b)| a == b)
        .count();
    let max_suffix = funny.len().min(serious.len()) - prefix;
    let suffix = funny
        .iter()
        .rev()
        .zip(serious.iter().rev())
        .take(max_suffix)
        .take_while(|(a, b)| a == b)
        .count();
    let funny_span = prefix..funny.len() - suffix;
    let serious_span = prefix..serious.len() - suffix;
    let widened = shares_token(&funny[funny_span.clone()], &serious[serious_span.clone()]);
    Ok(TokenAlignment {
        funny_tokens: funny,
        serious_tokens: serious,
        funny_span,
        serious_span,
        widened,
    })
}

fn shares_token(a: &[String], b: &[String]) -> bool {
    a.iter().any(|t| b.contains(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::word_tokenize;

    fn align(f: &str, s: &str) -> TokenAlignment {
        align_tokens(word_tokenize(f), word_tokenize(s)).unwrap()
    }

    #[test]
    fn substitution_at_tail() {
        let a = align(
            "tiger woods announces return to sex",
            "tiger woods announces return to golf",
        );
        assert_eq!(a.funny_span, 5..6);
        assert_eq!(a.serious_span, 5..6);
        assert_eq!(a.funny_tokens[5], "sex");
        assert_eq!(a.serious_tokens[5], "golf");
        assert!(!a.widened);
    }

    #[test]
    fn pure_deletion() {
        let a = align(
            "general motors reports record sales of new disposable car",
            "general motors reports record sales of new car",
        );
        assert_eq!(a.funny_span, 7..8);
        assert_eq!(a.funny_tokens[7], "disposable");
        assert!(a.serious_span.is_empty());
        assert!(a.is_consistent());
    }

    #[test]
    fn repeated_token_prefers_longer_prefix() {
        // "b" could be matched on either side of the inserted token.
        let a = align("a b b c", "a b c");
        assert_eq!(a.funny_span, 2..3);
        assert_eq!(a.serious_span, 2..2);
    }

    #[test]
    fn multi_region_is_widened_and_flagged() {
        let a = align("x cat sat on mat y", "x dog sat on rug y");
        assert_eq!(a.funny_span, 1..5);
        assert!(a.widened);
        assert!(a.is_consistent());
    }

    #[test]
    fn identical_rejected() {
        let err = align_tokens(word_tokenize("A b"), word_tokenize("a B")).unwrap_err();
        assert!(matches!(err, Error::IdenticalSentences(_)));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(
            align_tokens(vec![], vec!["a".into()]),
            Err(Error::EmptySentence)
        ));
    }
}
