use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std).
    Normal(f64),
    /// Uniform(-bound, bound).
    Uniform(f64),
}

/// Named, seeded parameter storage.
///
/// Candle's CPU random generator cannot be seeded, so all random
/// initialisation goes through a ChaCha stream owned here. Parameters are
/// created in a fixed order by the model constructors, which makes the
/// initial weights a pure function of the seed.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
            Init::Uniform(bound) => {
                use rand::Rng;
                (0..n)
                    .map(|_| self.rng.random_range(-bound..bound) as f32)
                    .collect()
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &self.device)?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    /// Pre-populates parameters from already loaded tensors; subsequent
    /// `get` calls return them instead of initialising.
    pub fn preload(&mut self, tensors: HashMap<String, Tensor>) -> Result<()> {
        for (name, t) in tensors {
            let t = t.to_dtype(DType::F32)?;
            self.vars.insert(name, Var::from_tensor(&t)?);
        }
        Ok(())
    }

    /// Overwrites the values of existing parameters in place, so tensors
    /// already handed to a model observe the change.
    pub fn assign(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, t) in tensors {
            let var = self
                .vars
                .get(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            if var.dims() != t.dims() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, checkpoint has {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Detached copies of the current values.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }

    /// SHA-256 over parameter names and little-endian f32 values, in name order.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            h.update([0u8]);
            for x in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Loads every tensor of a safetensors file on the CPU.
pub fn load_safetensors(path: &Path) -> Result<HashMap<String, Tensor>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let mut a = ParamStore::new(3);
        let mut b = ParamStore::new(3);
        for store in [&mut a, &mut b] {
            store.get("w", &[4, 3], Init::Normal(0.02)).unwrap();
            store.get("b", &[3], Init::Zeros).unwrap();
        }
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
        let mut c = ParamStore::new(4);
        c.get("w", &[4, 3], Init::Normal(0.02)).unwrap();
        c.get("b", &[3], Init::Zeros).unwrap();
        assert_ne!(a.checksum().unwrap(), c.checksum().unwrap());
    }

    #[test]
    fn get_is_idempotent_and_shape_checked() {
        let mut s = ParamStore::new(0);
        let x = s.get("w", &[2, 2], Init::Uniform(1.0)).unwrap();
        let y = s.get("w", &[2, 2], Init::Zeros).unwrap();
        assert_eq!(x.to_vec2::<f32>().unwrap(), y.to_vec2::<f32>().unwrap());
        assert!(s.get("w", &[4], Init::Zeros).is_err());
    }

    #[test]
    fn assign_updates_shared_tensors() {
        let mut s = ParamStore::new(0);
        let t = s.get("w", &[2], Init::Zeros).unwrap();
        let new = HashMap::from([(
            "w".to_string(),
            Tensor::new(&[1f32, 2.0], &Device::Cpu).unwrap(),
        )]);
        s.assign(&new).unwrap();
        assert_eq!(t.to_vec1::<f32>().unwrap(), vec![1.0, 2.0]);
    }
}
