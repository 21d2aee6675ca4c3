use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Local directory of model assets, keyed by opaque ids.
///
/// An id such as `bert-base-uncased` resolves to `<root>/bert-base-uncased/`
/// holding `config.json`, the tokenizer files and `model.safetensors`.
/// Word-vector ids resolve either to a file `<root>/<id>` or to
/// `<root>/<id>/vectors.vec`.
#[derive(Debug, Clone)]
pub struct ModelCache {
    root: PathBuf,
}

impl ModelCache {
    pub const ENV: &'static str = "HUMORSCOPE_MODEL_CACHE";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        ModelCache { root: root.into() }
    }

    /// Root from `HUMORSCOPE_MODEL_CACHE`, else `./models`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(Self::ENV).map(PathBuf::from).unwrap_or_else(|| "models".into()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, id: &str) -> Result<PathBuf> {
        if id.is_empty() || id.split('/').any(|c| c == "..") {
            return Err(Error::Config(format!("invalid model id {id:?}")));
        }
        let dir = self.root.join(id);
        if dir.is_dir() {
            Ok(dir)
        } else {
            Err(Error::MissingArtifact(dir))
        }
    }

    pub fn vectors_path(&self, id: &str) -> Result<PathBuf> {
        let direct = self.root.join(id);
        if direct.is_file() {
            return Ok(direct);
        }
        let nested = direct.join("vectors.vec");
        if nested.is_file() {
            Ok(nested)
        } else {
            Err(Error::MissingArtifact(nested))
        }
    }
}
