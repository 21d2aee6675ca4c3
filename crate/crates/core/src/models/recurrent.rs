//! Single-layer unidirectional LSTM over frozen word vectors.

use candle_core::{Device, Tensor};

use super::nn::linear;
use super::params::{Init, ParamStore};
use super::vectors::WordVectors;
use crate::Result;

pub struct RecurrentEncoder {
    pub vectors: WordVectors,
    hidden: usize,
    params: ParamStore,
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
}

impl std::fmt::Debug for RecurrentEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecurrentEncoder")
            .field("hidden", &self.hidden)
            .finish_non_exhaustive()
    }
}

impl RecurrentEncoder {
    pub fn new(vectors: WordVectors, hidden: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let e = vectors.dim();
        let w_ih = params.get("lstm.weight_ih", &[4 * hidden, e], Init::Uniform(bound))?;
        let w_hh = params.get("lstm.weight_hh", &[4 * hidden, hidden], Init::Uniform(bound))?;
        let bias = params.get("lstm.bias", &[4 * hidden], Init::Uniform(bound))?;
        Ok(RecurrentEncoder {
            vectors,
            hidden,
            params,
            w_ih,
            w_hh,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Final hidden state after the last known word; the zero state for
    /// sentences without known words.
    pub fn embed(&self, batch: &[(&[String], &[bool])]) -> Result<Tensor> {
        let dev = Device::Cpu;
        let e = self.vectors.dim();
        let h = self.hidden;
        let b = batch.len();
        let seqs: Vec<Vec<&[f32]>> = batch
            .iter()
            .map(|(w, m)| self.vectors.lookup(w, m))
            .collect();
        let t_max = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut state_h = Tensor::zeros((b, h), candle_core::DType::F32, &dev)?;
        let mut state_c = state_h.clone();
        for t in 0..t_max {
            let mut xs = Vec::with_capacity(b * e);
            let mut live = Vec::with_capacity(b);
            for seq in &seqs {
                match seq.get(t) {
                    Some(v) => {
                        xs.extend_from_slice(v);
                        live.push(1f32);
                    }
                    None => {
                        xs.extend(std::iter::repeat_n(0f32, e));
                        live.push(0f32);
                    }
                }
            }
            let x = Tensor::from_vec(xs, (b, e), &dev)?;
            let live = Tensor::from_vec(live, (b, 1), &dev)?;
            let gates = (linear(&x, &self.w_ih, Some(&self.bias))? + linear(&state_h, &self.w_hh, None)?)?;
            let chunk = |i: usize| gates.narrow(1, i * h, h);
            let i_g = candle_nn::ops::sigmoid(&chunk(0)?)?;
            let f_g = candle_nn::ops::sigmoid(&chunk(1)?)?;
            let g_g = chunk(2)?.tanh()?;
            let o_g = candle_nn::ops::sigmoid(&chunk(3)?)?;
            let c_new = ((f_g * &state_c)? + (i_g * g_g)?)?;
            let h_new = (o_g * c_new.tanh()?)?;
            let keep = (1.0 - &live)?;
            state_c = (live.broadcast_mul(&c_new)? + keep.broadcast_mul(&state_c)?)?;
            state_h = (live.broadcast_mul(&h_new)? + keep.broadcast_mul(&state_h)?)?;
        }
        Ok(state_h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::vectors::tests::toy_vectors;

    fn w(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn batch_matches_single_and_padding_is_inert() {
        let enc = RecurrentEncoder::new(toy_vectors(), 5, 1).unwrap();
        let s1 = w("a b c");
        let s2 = w("b");
        let m1 = vec![false; 3];
        let m2 = vec![false; 1];
        let both = enc.embed(&[(&s1, &m1), (&s2, &m2)]).unwrap().to_vec2::<f32>().unwrap();
        let only2 = enc.embed(&[(&s2, &m2)]).unwrap().to_vec2::<f32>().unwrap();
        for (a, b) in both[1].iter().zip(&only2[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn unknown_sentence_is_zero_state() {
        let enc = RecurrentEncoder::new(toy_vectors(), 4, 1).unwrap();
        let s = w("qqq");
        let out = enc.embed(&[(&s, &[false])]).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(out[0], vec![0.0; 4]);
    }
}
