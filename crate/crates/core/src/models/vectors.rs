//! Pretrained word vectors and the bag-of-vectors encoder.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use candle_core::{Device, Tensor};

use crate::{Error, Result};

/// Word-vector table in fastText `.vec` text format.
#[derive(Debug, Clone)]
pub struct WordVectors {
    index: HashMap<String, usize>,
    data: Vec<f32>,
    dim: usize,
}

impl WordVectors {
    pub fn from_pairs(pairs: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let dim = pairs.first().map(|(_, v)| v.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::EmptyInput("word vector table".into()));
        }
        let mut index = HashMap::new();
        let mut data = Vec::with_capacity(pairs.len() * dim);
        for (word, v) in pairs {
            if v.len() != dim {
                return Err(Error::LengthMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("non-finite vector for {word:?}")));
            }
            if index.contains_key(&word) {
                continue;
            }
            index.insert(word, index.len());
            data.extend(v);
        }
        Ok(WordVectors { index, data, dim })
    }

    /// Reads a `.vec` file. Keys are case-folded; the first vector seen for
    /// a folded key wins. An optional `count dim` header line is skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
            let values = values.map_err(|e| Error::MalformedRow {
                row: i + 1,
                reason: e.to_string(),
            })?;
            if i == 0 && values.len() == 1 {
                continue;
            }
            pairs.push((word.to_lowercase(), values));
        }
        Self::from_pairs(pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut words: Vec<(&String, &usize)> = self.index.iter().collect();
        words.sort_by_key(|(_, &i)| i);
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        let io = |e| Error::io(path, e);
        writeln!(out, "{} {}", words.len(), self.dim).map_err(io)?;
        for (w, &i) in words {
            write!(out, "{w}").map_err(io)?;
            for x in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {x}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Vectors of the known, unmasked words, in order.
    pub(crate) fn lookup<'a>(&'a self, words: &'a [String], masked: &'a [bool]) -> Vec<&'a [f32]> {
        words
            .iter()
            .enumerate()
            .filter(|(i, _)| !masked.get(*i).copied().unwrap_or(false))
            .filter_map(|(_, w)| self.get(w))
            .collect()
    }
}

/// Mean of the word vectors of a sentence. Unknown and masked words are
/// skipped; a sentence with no known word maps to the zero vector and is
/// flagged.
#[derive(Debug, Clone)]
pub struct BagOfVectors {
    pub vectors: WordVectors,
}

impl BagOfVectors {
    pub fn embed_one(&self, words: &[String], masked: &[bool]) -> (Vec<f32>, bool) {
        let found = self.vectors.lookup(words, masked);
        let mut mean = vec![0f32; self.vectors.dim];
        if found.is_empty() {
            return (mean, true);
        }
        for v in &found {
            for (m, x) in mean.iter_mut().zip(*v) {
                *m += x;
            }
        }
        let n = found.len() as f32;
        mean.iter_mut().for_each(|m| *m /= n);
        (mean, false)
    }

    pub fn embed(&self, batch: &[(&[String], &[bool])]) -> Result<Tensor> {
        let dim = self.vectors.dim;
        let mut data = Vec::with_capacity(batch.len() * dim);
        for (words, masked) in batch {
            data.extend(self.embed_one(words, masked).0);
        }
        Ok(Tensor::from_vec(data, (batch.len(), dim), &Device::Cpu)?)
    }
}
