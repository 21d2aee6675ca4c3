//! Binary interchange format for attention tensors.
//!
//! Layout, all little-endian:
//!
//! | field        | type            |
//! |--------------|-----------------|
//! | magic        | `b"HSAT"`       |
//! | layers       | u32             |
//! | heads        | u32             |
//! | seq_len      | u32             |
//! | id length    | u32             |
//! | sentence id  | UTF-8 bytes     |
//! | weights      | f32, row-major `[layer][head][query][key]` |

use std::io::{Read, Write};
use std::path::Path;

use super::AttentionTensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"HSAT";

pub fn write_attention(tensor: &AttentionTensor, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + tensor.sentence_id.len() + 4 * tensor.weights().len());
    buf.extend_from_slice(MAGIC);
    for v in [tensor.layers(), tensor.heads(), tensor.seq_len(), tensor.sentence_id.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(tensor.sentence_id.as_bytes());
    for w in tensor.weights() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_attention(path: &Path) -> Result<AttentionTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::MissingArtifact(path.to_path_buf()))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::BadAttentionFile(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("missing header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (layers, heads, seq_len, id_len) = (word(0), word(1), word(2), word(3));
    let body = 20 + id_len;
    let expected = layers * heads * seq_len * seq_len;
    if bytes.len() != body + 4 * expected {
        return Err(bad("length does not match header"));
    }
    let id = std::str::from_utf8(&bytes[20..body]).map_err(|_| bad("sentence id is not UTF-8"))?;
    let weights = bytes[body..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    AttentionTensor::new(id, layers, heads, seq_len, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::testing::random_tensor;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let t = random_tensor("pair-7/funny", 2, 3, 5, 4);
        let path = dir.path().join("a.bin");
        write_attention(&t, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 20 + 12 + 4 * 2 * 3 * 25);
        assert_eq!(read_attention(&path).unwrap(), t);
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_attention(&path), Err(Error::BadAttentionFile(_))));
        assert!(matches!(read_attention(&dir.path().join("none")), Err(Error::MissingArtifact(_))));
    }
}
