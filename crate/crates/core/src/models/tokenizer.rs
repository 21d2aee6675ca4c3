use std::fmt;
use std::ops::Range;
use std::path::Path;

use rust_tokenizers::tokenizer::{BertTokenizer, Gpt2Tokenizer, RobertaTokenizer, Tokenizer};
use rust_tokenizers::vocab::Vocab;
use serde::Deserialize;

use crate::{Error, Result};

/// Ids of the special tokens a sequence is framed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    /// `[CLS]`, `<s>` or `<|endoftext|>`.
    pub start: u32,
    /// `[SEP]` or `</s>`; causal LMs have none.
    pub end: Option<u32>,
    pub pad: u32,
    pub mask: Option<u32>,
    pub unk: u32,
}

/// Model-owned subword tokenizer, applied word by word so that every
/// subword position maps back to exactly one word.
pub enum SubwordTokenizer {
    WordPiece(BertTokenizer, SpecialIds),
    Roberta(RobertaTokenizer, SpecialIds),
    Gpt2(Gpt2Tokenizer, SpecialIds),
}

impl fmt::Debug for SubwordTokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self {
            SubwordTokenizer::WordPiece(..) => "WordPiece",
            SubwordTokenizer::Roberta(..) => "Roberta",
            SubwordTokenizer::Gpt2(..) => "Gpt2",
        };
        f.debug_struct("SubwordTokenizer")
            .field("kind", &kind)
            .field("special", self.special())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerKind {
    WordPiece,
    Roberta,
    Gpt2,
}

#[derive(Deserialize, Default)]
struct TokenizerConfig {
    do_lower_case: Option<bool>,
}

/// Subword ids of a framed sentence plus the positions of each word.
///
/// `words[i]` is the range of sequence positions holding word `i`'s
/// subwords; special-token positions belong to no word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordLayout {
    pub ids: Vec<u32>,
    pub words: Vec<Range<usize>>,
}

impl SubwordLayout {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Word index owning a sequence position, if any.
    pub fn word_at(&self, position: usize) -> Option<usize> {
        self.words.iter().position(|r| r.contains(&position))
    }

    /// Number of subword tokens (sequence length without specials).
    pub fn subword_count(&self) -> usize {
        self.words.iter().map(|r| r.len()).sum()
    }
}

fn to_u32(ids: Vec<i64>) -> Vec<u32> {
    ids.into_iter().map(|i| i as u32).collect()
}

fn tok_err(e: impl fmt::Display) -> Error {
    Error::Tokenizer(e.to_string())
}

impl SubwordTokenizer {
    pub fn from_dir(dir: &Path, kind: TokenizerKind) -> Result<Self> {
        let need = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::MissingArtifact(p))
            }
        };
        match kind {
            TokenizerKind::WordPiece => {
                let lower = std::fs::read_to_string(dir.join("tokenizer_config.json"))
                    .ok()
                    .and_then(|s| serde_json::from_str::<TokenizerConfig>(&s).ok())
                    .unwrap_or_default()
                    .do_lower_case
                    .unwrap_or(true);
                let tok = BertTokenizer::from_file(need("vocab.txt")?, lower, lower)
                    .map_err(tok_err)?;
                let v = tok.vocab();
                let id = |t: &str| v.token_to_id(t) as u32;
                let special = SpecialIds {
                    start: id("[CLS]"),
                    end: Some(id("[SEP]")),
                    pad: id("[PAD]"),
                    mask: Some(id("[MASK]")),
                    unk: id("[UNK]"),
                };
                Ok(SubwordTokenizer::WordPiece(tok, special))
            }
            TokenizerKind::Roberta => {
                let tok = RobertaTokenizer::from_file(
                    need("vocab.json")?,
                    need("merges.txt")?,
                    false,
                    false,
                )
                .map_err(tok_err)?;
                let v = tok.vocab();
                let id = |t: &str| v.token_to_id(t) as u32;
                let special = SpecialIds {
                    start: id("<s>"),
                    end: Some(id("</s>")),
                    pad: id("<pad>"),
                    mask: Some(id("<mask>")),
                    unk: id("<unk>"),
                };
                Ok(SubwordTokenizer::Roberta(tok, special))
            }
            TokenizerKind::Gpt2 => {
                let tok = Gpt2Tokenizer::from_file(need("vocab.json")?, need("merges.txt")?, false)
                    .map_err(tok_err)?;
                let v = tok.vocab();
                let eot = v.token_to_id("<|endoftext|>") as u32;
                let special = SpecialIds {
                    start: eot,
                    end: None,
                    pad: eot,
                    mask: None,
                    unk: eot,
                };
                Ok(SubwordTokenizer::Gpt2(tok, special))
            }
        }
    }

    pub fn special(&self) -> &SpecialIds {
        match self {
            SubwordTokenizer::WordPiece(_, s)
            | SubwordTokenizer::Roberta(_, s)
            | SubwordTokenizer::Gpt2(_, s) => s,
        }
    }

    pub fn kind(&self) -> TokenizerKind {
        match self {
            SubwordTokenizer::WordPiece(..) => TokenizerKind::WordPiece,
            SubwordTokenizer::Roberta(..) => TokenizerKind::Roberta,
            SubwordTokenizer::Gpt2(..) => TokenizerKind::Gpt2,
        }
    }

    /// Subword ids of one word at word index `index` (byte-level BPE
    /// vocabularies encode the preceding space into non-initial words).
    pub fn word_ids(&self, word: &str, index: usize) -> Vec<u32> {
        let ids = match self {
            SubwordTokenizer::WordPiece(t, _) => {
                let toks = t.tokenize(word);
                t.convert_tokens_to_ids(&toks)
            }
            SubwordTokenizer::Roberta(t, _) => {
                let text = if index == 0 { word.to_string() } else { format!(" {word}") };
                let toks = t.tokenize(&text);
                t.convert_tokens_to_ids(&toks)
            }
            SubwordTokenizer::Gpt2(t, _) => {
                let text = if index == 0 { word.to_string() } else { format!(" {word}") };
                let toks = t.tokenize(&text);
                t.convert_tokens_to_ids(&toks)
            }
        };
        let ids = to_u32(ids);
        if ids.is_empty() {
            vec![self.special().unk]
        } else {
            ids
        }
    }

    /// Frames a word sequence with the special tokens. Words flagged in
    /// `masked` keep their subword count but every position becomes the
    /// mask token.
    pub fn layout(&self, words: &[String], masked: Option<&[bool]>) -> Result<SubwordLayout> {
        let special = *self.special();
        let mut ids = vec![special.start];
        let mut spans = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let mut pieces = self.word_ids(w, i);
            if masked.is_some_and(|m| m.get(i).copied().unwrap_or(false)) {
                let mask = special
                    .mask
                    .ok_or_else(|| Error::Unsupported("tokenizer has no mask token".into()))?;
                pieces.iter_mut().for_each(|p| *p = mask);
            }
            let start = ids.len();
            ids.extend(pieces);
            spans.push(start..ids.len());
        }
        if let Some(end) = special.end {
            ids.push(end);
        }
        Ok(SubwordLayout { ids, words: spans })
    }
}
