use candle_core::{DType, Device, Tensor};

use crate::error::Result;
use crate::nn::layers::{softmax, Linear};
use crate::nn::Scope;

/// Additive value used to exclude attention positions.
pub(crate) const MASKED: f64 = -1e9;

#[derive(Clone)]
pub(crate) struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub(crate) fn new(s: &Scope, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&s.pp("q"), dim, dim)?,
            k: Linear::new(&s.pp("k"), dim, dim)?,
            v: Linear::new(&s.pp("v"), dim, dim)?,
            o: Linear::new(&s.pp("o"), dim, dim)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `query (B, Tq, D)` attends over `memory (B, Tk, D)`; `bias` is added
    /// to the scores and must broadcast to `(B, H, Tq, Tk)`.
    pub(crate) fn forward(&self, query: &Tensor, memory: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, tq, d) = query.dims3()?;
        let q = self.split(&self.q.forward(query)?)?;
        let k = self.split(&self.k.forward(memory)?)?;
        let v = self.split(&self.v.forward(memory)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = softmax(&scores, 3)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, tq, d))?;
        self.o.forward(&out)
    }
}

/// `(B, 1, 1, T_max)` additive mask hiding key positions past each length.
pub(crate) fn key_padding_mask(lengths: &[usize], t_max: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let vals: Vec<f64> = lengths
        .iter()
        .flat_map(|&l| (0..t_max).map(move |j| if j < l { 0.0 } else { MASKED }))
        .collect();
    Ok(Tensor::from_vec(vals, (lengths.len(), 1, 1, t_max), device)?.to_dtype(dtype)?)
}

/// `(1, 1, T, T)` additive mask hiding future positions.
pub(crate) fn causal_mask(t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let vals: Vec<f64> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j <= i { 0.0 } else { MASKED }))
        .collect();
    Ok(Tensor::from_vec(vals, (1, 1, t, t), device)?.to_dtype(dtype)?)
}

/// `(B, T, 1)` multiplicative mask that is 1 on valid frames.
pub(crate) fn frame_mask(lengths: &[usize], t_max: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let vals: Vec<f64> = lengths
        .iter()
        .flat_map(|&l| (0..t_max).map(move |j| if j < l { 1.0 } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(vals, (lengths.len(), t_max, 1), device)?.to_dtype(dtype)?)
}
