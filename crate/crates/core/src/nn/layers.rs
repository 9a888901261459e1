//! Layers expressed with `candle` tensor ops so they differentiate in any
//! float dtype (the gradient checks run them in f64).

use candle_core::{Tensor, D};

use super::{Init, Scope};
use crate::error::{Error, Result};

pub fn relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.relu()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// x · σ(x).
pub fn swish(x: &Tensor) -> Result<Tensor> {
    Ok((x * sigmoid(x)?)?)
}

/// Gated linear unit over dimension `dim`: first half ⊙ σ(second half).
pub fn glu(x: &Tensor, dim: usize) -> Result<Tensor> {
    let n = x.dim(dim)? / 2;
    let a = x.narrow(dim, 0, n)?;
    let b = x.narrow(dim, n, n)?;
    Ok((a * sigmoid(&b)?)?)
}

/// Softmax over `dim`, shifted by a detached maximum for stability.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let m = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

pub fn log_softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let m = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Nearest-neighbour 2× upsampling of `(N, C, H, W)` built from broadcasts,
/// so gradients accumulate correctly when the input has other consumers.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .reshape((n, c, 2 * h, 2 * w))?)
}

/// Non-overlapping 2×2 max pooling of `(N, C, H, W)` with even `H`, `W`.
/// Built on a max reduction so the gradient goes to the window maximum
/// unscaled (candle's own max-pool backward scales it by 1/4).
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("2×2 max pooling needs even sides, got {h}×{w}")));
    }
    Ok(x.reshape((n, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

#[derive(Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &Scope, inp: usize, out: usize) -> Result<Self> {
        Self::with_bias(s, inp, out, true)
    }

    pub fn with_bias(s: &Scope, inp: usize, out: usize, bias: bool) -> Result<Self> {
        let weight = s.param("weight", &[out, inp], Init::FanIn(inp))?;
        let bias = if bias {
            Some(s.param("bias", &[out], Init::FanIn(inp))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let inp = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / inp;
        let y = x.reshape((rows, inp))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(s: &Scope, inp: usize, out: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Result<Self> {
        let fan_in = inp * kernel;
        Ok(Self {
            weight: s.param("weight", &[out, inp, kernel], Init::FanIn(fan_in))?,
            bias: if bias { Some(s.param("bias", &[out], Init::FanIn(fan_in))?) } else { None },
            stride,
            padding,
        })
    }

    /// `(N, C, L)` → `(N, O, L')`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = super::conv::conv1d(x, &self.weight, self.stride, self.padding)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1))?)?,
            None => y,
        })
    }
}

#[derive(Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(s: &Scope, inp: usize, out: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Result<Self> {
        let fan_in = inp * kernel * kernel;
        Ok(Self {
            weight: s.param("weight", &[out, inp, kernel, kernel], Init::FanIn(fan_in))?,
            bias: if bias { Some(s.param("bias", &[out], Init::FanIn(fan_in))?) } else { None },
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// `(N, C, H, W)` → `(N, O, H', W')`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = super::conv::conv2d(x, &self.weight, (self.stride, self.stride), (self.padding, self.padding))?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// Stacks each output time step's `kt` input frames along the channel axis:
/// `(B, C, T, H, W)` → `(B·T', C·kt, H, W)` with zero padding `pad` on both
/// ends of time and unit temporal stride.
pub fn temporal_unfold(x: &Tensor, kt: usize, pad: usize) -> Result<Tensor> {
    let (b, c, t, h, w) = x.dims5()?;
    let x = if pad > 0 { x.pad_with_zeros(2, pad, pad)? } else { x.clone() };
    let t_out = t + 2 * pad + 1 - kt;
    let windows = (0..kt).map(|k| x.narrow(2, k, t_out)).collect::<candle_core::Result<Vec<_>>>()?;
    // (B, C, kt, T', H, W) → (B, T', C, kt, H, W)
    let stacked = Tensor::stack(&windows, 2)?.permute((0, 3, 1, 2, 4, 5))?;
    Ok(stacked.contiguous()?.reshape((b * t_out, c * kt, h, w))?)
}

/// Spatio-temporal convolution with unit temporal stride, square spatial
/// kernel, computed as a 2D convolution over temporally unfolded input.
#[derive(Clone)]
pub struct Conv3d {
    weight: Tensor,
    bias: Option<Tensor>,
    kt: usize,
    pad_t: usize,
    stride: usize,
    padding: usize,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        s: &Scope,
        inp: usize,
        out: usize,
        kt: usize,
        k: usize,
        stride: usize,
        pad_t: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = inp * kt * k * k;
        Ok(Self {
            weight: s.param("weight", &[out, inp, kt, k, k], Init::FanIn(fan_in))?,
            bias: if bias { Some(s.param("bias", &[out], Init::FanIn(fan_in))?) } else { None },
            kt,
            pad_t,
            stride,
            padding,
        })
    }

    /// `(B, C, T, H, W)` → `(B, O, T', H', W')`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, _, _, _) = x.dims5()?;
        let (o, c, kt, kh, kw) = self.weight.dims5()?;
        let unfolded = temporal_unfold(x, self.kt, self.pad_t)?;
        let w2 = self.weight.reshape((o, c * kt, kh, kw))?;
        let y = super::conv::conv2d(&unfolded, &w2, (self.stride, self.stride), (self.padding, self.padding))?;
        let y = match &self.bias {
            Some(bias) => y.broadcast_add(&bias.reshape((1, o, 1, 1))?)?,
            None => y,
        };
        let (bt, _, h, w) = y.dims4()?;
        Ok(y.reshape((b, bt / b, o, h, w))?.permute((0, 2, 1, 3, 4))?.contiguous()?)
    }
}

/// Batch normalisation over every axis except the channel axis 1.
#[derive(Clone)]
pub struct BatchNorm {
    weight: Tensor,
    bias: Tensor,
    running_mean: candle_core::Var,
    running_var: candle_core::Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm {
    pub fn new(s: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", &[channels], Init::Const(1.0))?,
            bias: s.param("bias", &[channels], Init::Const(0.0))?,
            running_mean: s.buffer("running_mean", &[channels], 0.0)?,
            running_var: s.buffer("running_var", &[channels], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let rank = x.rank();
        let c = x.dim(1)?;
        let mut bshape = vec![1usize; rank];
        bshape[1] = c;
        let (mean, var) = if train {
            let mut mean = x.clone();
            for d in (0..rank).filter(|&d| d != 1) {
                mean = mean.mean_keepdim(d)?;
            }
            let centered = x.broadcast_sub(&mean)?;
            let mut var = centered.sqr()?;
            for d in (0..rank).filter(|&d| d != 1) {
                var = var.mean_keepdim(d)?;
            }
            let n = (x.elem_count() / c) as f64;
            let m = self.momentum;
            let rm = self.running_mean.as_tensor();
            let rv = self.running_var.as_tensor();
            let batch_mean = mean.detach().flatten_all()?.to_dtype(rm.dtype())?;
            let unbiased = (var.detach().flatten_all()? * (n / (n - 1.0).max(1.0)))?.to_dtype(rv.dtype())?;
            self.running_mean.set(&((rm * (1.0 - m))? + (batch_mean * m)?)?)?;
            self.running_var.set(&((rv * (1.0 - m))? + (unbiased * m)?)?)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().detach().reshape(bshape.clone())?,
                self.running_var.as_tensor().detach().reshape(bshape.clone())?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.weight.reshape(bshape.clone())?)?
            .broadcast_add(&self.bias.reshape(bshape)?)?)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(s: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", &[dim], Init::Const(1.0))?,
            bias: s.param("bias", &[dim], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(s: &Scope, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: s.param("weight", &[vocab, dim], Init::Normal { std: 1.0 / (dim as f64).sqrt() })?,
        })
    }

    /// `(B, L)` u32 ids → `(B, L, D)`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut dims = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let out = self.table.index_select(&flat, 0)?;
        dims.push(self.table.dim(1)?);
        Ok(out.reshape(dims)?)
    }
}

/// One GRU layer (PyTorch gate layout: reset, update, new).
#[derive(Clone)]
struct GruLayer {
    input: Linear,
    hidden: Linear,
    size: usize,
}

impl GruLayer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h3 = self.size * 3;
        let xp = self.input.forward(x)?;
        let mut h = Tensor::zeros((b, self.size), x.dtype(), x.device())?;
        let mut outs = Vec::with_capacity(t);
        for step in 0..t {
            let xs = xp.narrow(1, step, 1)?.reshape((b, h3))?;
            let hs = self.hidden.forward(&h)?;
            let r = sigmoid(&(xs.narrow(1, 0, self.size)? + hs.narrow(1, 0, self.size)?)?)?;
            let z = sigmoid(&(xs.narrow(1, self.size, self.size)? + hs.narrow(1, self.size, self.size)?)?)?;
            let n = (xs.narrow(1, 2 * self.size, self.size)? + (r * hs.narrow(1, 2 * self.size, self.size)?)?)?.tanh()?;
            h = ((z.ones_like()? - &z)? * n)?.add(&(z * &h)?)?;
            outs.push(h.clone());
        }
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// Stacked GRU over `(B, T, I)`, zero initial state, returning the top
/// layer's hidden state at every step `(B, T, H)`.
#[derive(Clone)]
pub struct Gru {
    layers: Vec<GruLayer>,
}

impl Gru {
    pub fn new(s: &Scope, inp: usize, hidden: usize, num_layers: usize) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|i| {
                let ls = s.pp(format!("l{i}"));
                let in_dim = if i == 0 { inp } else { hidden };
                Ok(GruLayer {
                    input: Linear::new(&ls.pp("ih"), in_dim, 3 * hidden)?,
                    hidden: Linear::new(&ls.pp("hh"), hidden, 3 * hidden)?,
                    size: hidden,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn temporal_unfold_matches_direct_conv3d() {
        // direct triple loop over a tiny volume
        let store = ParamStore::new(3, DType::F64);
        let conv = Conv3d::new(&store.root(), 2, 3, 3, 3, 2, 1, 1, true).unwrap();
        let (b, c, t, h, w) = (1, 2, 4, 6, 6);
        let vals: Vec<f64> = (0..b * c * t * h * w).map(|i| ((i * 37) % 19) as f64 / 10.0 - 0.9).collect();
        let x = Tensor::from_vec(vals.clone(), (b, c, t, h, w), &Device::Cpu).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, 4, 3, 3]);
        let wt = conv.weight.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let bias = conv.bias.as_ref().unwrap().to_vec1::<f64>().unwrap();
        let at = |ci: usize, ti: i64, yi: i64, xi: i64| {
            if ti < 0 || ti >= t as i64 || yi < 0 || yi >= h as i64 || xi < 0 || xi >= w as i64 {
                0.0
            } else {
                vals[((ci * t + ti as usize) * h + yi as usize) * w + xi as usize]
            }
        };
        let got = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for o in 0..3 {
            for to in 0..4 {
                for yo in 0..3 {
                    for xo in 0..3 {
                        let mut acc = bias[o];
                        for ci in 0..2 {
                            for kt in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let wv = wt[(((o * 2 + ci) * 3 + kt) * 3 + ky) * 3 + kx];
                                        acc += wv * at(ci, to as i64 + kt as i64 - 1, (yo * 2 + ky) as i64 - 1, (xo * 2 + kx) as i64 - 1);
                                    }
                                }
                            }
                        }
                        let g = got[((o * 4 + to) * 3 + yo) * 3 + xo];
                        assert!((g - acc).abs() < 1e-12, "{g} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn batchnorm_train_normalises_and_tracks() {
        let store = ParamStore::new(0, DType::F64);
        let bn = BatchNorm::new(&store.root(), 2).unwrap();
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], (2, 2, 2), &Device::Cpu).unwrap();
        let y = bn.forward(&x, true).unwrap();
        let ch0: Vec<f64> = y.narrow(1, 0, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let mean: f64 = ch0.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        let rm = bn.running_mean.as_tensor().to_vec1::<f64>().unwrap();
        // channel 0 holds 1, 2, 5, 6
        assert!((rm[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn max_pool_routes_whole_gradient_to_the_maximum() {
        let x = candle_core::Var::new(&[[[[1f64, 5.0, 2.0, 0.0], [3.0, 4.0, 9.0, 1.0]]]], &Device::Cpu).unwrap();
        let y = max_pool2x2(x.as_tensor()).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![5.0, 9.0]);
        let g = (y * Tensor::new(&[[[[2f64, 3.0]]]], &Device::Cpu).unwrap()).unwrap().sum_all().unwrap().backward().unwrap();
        let g = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(g, vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        assert!(max_pool2x2(&Tensor::zeros((1, 1, 3, 4), DType::F64, &Device::Cpu).unwrap()).is_err());
    }

    #[test]
    fn upsample_duplicates() {
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 1, 2, 2), &Device::Cpu).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(
            y.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn gru_shapes() {
        let store = ParamStore::new(0, DType::F32);
        let g = Gru::new(&store.root(), 5, 7, 2).unwrap();
        let x = Tensor::zeros((3, 4, 5), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(g.forward(&x).unwrap().dims(), &[3, 4, 7]);
    }
}
