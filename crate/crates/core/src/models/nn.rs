//! Small differentiable building blocks shared by the encoders.

use candle_core::{Tensor, D};

use crate::Result;

/// `x · wᵀ + b` for `x` of shape `[.., in]` and `w` of shape `[out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (last, lead) = dims.split_last().expect("linear on scalar");
    let rows: usize = lead.iter().product();
    let y = x.reshape((rows, *last))?.matmul(&w.t()?)?;
    let y = match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    };
    let mut out_dims = lead.to_vec();
    out_dims.push(w.dim(0)?);
    Ok(y.reshape(out_dims)?)
}

/// Same as [`linear`] for Conv1D-style weights stored as `[in, out]`.
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (last, lead) = dims.split_last().expect("conv1d on scalar");
    let rows: usize = lead.iter().product();
    let y = x.reshape((rows, *last))?.matmul(w)?.broadcast_add(b)?;
    let mut out_dims = lead.to_vec();
    out_dims.push(w.dim(1)?);
    Ok(y.reshape(out_dims)?)
}

pub fn layer_norm(x: &Tensor, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::layer_norm_slow(x, weight, bias, eps as f32)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(z, 0) − z·y + log(1 + e^{−|z|})`.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let pos = logits.relu()?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let loss = ((pos - (logits * targets)?)? + soft)?;
    Ok(loss.mean_all()?)
}
