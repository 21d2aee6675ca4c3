use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, SentencePair, TokenAlignment};
use crate::{Error, Result};

/// One line of the prepared-corpus JSON-lines archive.
#[derive(Debug, Serialize, Deserialize)]
struct ArchiveLine {
    pair: SentencePair,
    hq: bool,
    alignment: TokenAlignment,
}

/// Writes the prepared corpus, one pair + alignment per line, in corpus
/// order. Output bytes depend only on the corpus contents.
pub fn write_archive(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in &corpus.pairs {
        let line = ArchiveLine {
            pair: pair.clone(),
            hq: corpus.is_hq(&pair.pair_id),
            alignment: corpus.alignment(&pair.pair_id).clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Corpus> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut hq_ids = BTreeSet::new();
    let mut alignment_index = std::collections::BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ArchiveLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: i + 1,
            reason: e.to_string(),
        })?;
        if !rec.alignment.is_consistent() {
            return Err(Error::MalformedRow {
                row: i + 1,
                reason: "inconsistent alignment".into(),
            });
        }
        if rec.hq {
            hq_ids.insert(rec.pair.pair_id.clone());
        }
        if alignment_index
            .insert(rec.pair.pair_id.clone(), rec.alignment)
            .is_some()
        {
            return Err(Error::DuplicatePairId(rec.pair.pair_id));
        }
        pairs.push(rec.pair);
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    Ok(Corpus {
        pairs,
        hq_ids,
        alignment_index,
    })
}
