use candle_core::Tensor;

use super::attention::{frame_mask, key_padding_mask, MultiHeadAttention};
use super::config::EncoderConfig;
use crate::error::Result;
use crate::nn::layers::{glu, swish, LayerNorm, Linear};
use crate::nn::{Init, Scope};

#[derive(Clone)]
struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(s: &Scope, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&s.pp("norm"), dim)?,
            up: Linear::new(&s.pp("up"), dim, hidden)?,
            down: Linear::new(&s.pp("down"), hidden, dim)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&swish(&self.up.forward(&self.norm.forward(x)?)?)?)
    }
}

/// Learned per-head bias indexed by the clipped relative distance `j − i`.
#[derive(Clone)]
struct RelativeBias {
    table: Tensor,
    max_dist: usize,
}

impl RelativeBias {
    fn new(s: &Scope, heads: usize, max_dist: usize) -> Result<Self> {
        Ok(Self {
            table: s.param("rel_bias", &[heads, 2 * max_dist + 1], Init::Const(0.0))?,
            max_dist,
        })
    }

    /// `(1, H, T, T)`.
    fn forward(&self, t: usize) -> Result<Tensor> {
        let k = self.max_dist as i64;
        let idx: Vec<u32> = (0..t as i64)
            .flat_map(|i| (0..t as i64).map(move |j| ((j - i).clamp(-k, k) + k) as u32))
            .collect();
        let idx = Tensor::from_vec(idx, t * t, self.table.device())?;
        let h = self.table.dim(0)?;
        Ok(self.table.index_select(&idx, 1)?.reshape((1, h, t, t))?)
    }
}

#[derive(Clone)]
struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: Tensor,
    depthwise_bias: Tensor,
    mid_norm: LayerNorm,
    pointwise_out: Linear,
}

impl ConvModule {
    fn new(s: &Scope, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&s.pp("norm"), dim)?,
            pointwise_in: Linear::new(&s.pp("pw_in"), dim, 2 * dim)?,
            depthwise: s.param("dw.weight", &[kernel, dim], Init::FanIn(kernel))?,
            depthwise_bias: s.param("dw.bias", &[dim], Init::Const(0.0))?,
            mid_norm: LayerNorm::new(&s.pp("mid_norm"), dim)?,
            pointwise_out: Linear::new(&s.pp("pw_out"), dim, dim)?,
        })
    }

    fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        let h = glu(&self.pointwise_in.forward(&self.norm.forward(x)?)?, 2)?;
        let h = h.broadcast_mul(mask)?;
        let k = self.depthwise.dim(0)?;
        let padded = h.pad_with_zeros(1, k / 2, k / 2)?;
        let mut acc = self.depthwise_bias.reshape((1, 1, ()))?.broadcast_as(h.shape())?.contiguous()?;
        for j in 0..k {
            let w = self.depthwise.narrow(0, j, 1)?.reshape((1, 1, ()))?;
            acc = (acc + padded.narrow(1, j, t)?.broadcast_mul(&w)?)?;
        }
        let h = swish(&self.mid_norm.forward(&acc)?)?;
        self.pointwise_out.forward(&h)
    }
}

#[derive(Clone)]
struct ConformerBlock {
    ff1: FeedForward,
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    rel: RelativeBias,
    conv: ConvModule,
    ff2: FeedForward,
    out_norm: LayerNorm,
}

impl ConformerBlock {
    fn new(s: &Scope, cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            ff1: FeedForward::new(&s.pp("ff1"), cfg.width, cfg.ff_width)?,
            attn_norm: LayerNorm::new(&s.pp("attn_norm"), cfg.width)?,
            attn: MultiHeadAttention::new(&s.pp("attn"), cfg.width, cfg.heads)?,
            rel: RelativeBias::new(&s.pp("attn"), cfg.heads, cfg.max_rel_pos)?,
            conv: ConvModule::new(&s.pp("conv"), cfg.width, cfg.conv_kernel)?,
            ff2: FeedForward::new(&s.pp("ff2"), cfg.width, cfg.ff_width)?,
            out_norm: LayerNorm::new(&s.pp("out_norm"), cfg.width)?,
        })
    }

    fn forward(&self, x: &Tensor, key_mask: &Tensor, frames: &Tensor) -> Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        let x = (x + (self.ff1.forward(x)? * 0.5)?)?;
        let bias = key_mask.broadcast_add(&self.rel.forward(t)?)?;
        let h = self.attn_norm.forward(&x)?;
        let x = (&x + self.attn.forward(&h, &h, Some(&bias))?)?;
        let x = (&x + self.conv.forward(&x, frames)?)?;
        let x = (&x + (self.ff2.forward(&x)? * 0.5)?)?;
        self.out_norm.forward(&x)
    }
}

/// Input projection followed by Conformer blocks (feed-forward,
/// self-attention, convolution, feed-forward).
#[derive(Clone)]
pub struct ConformerEncoder {
    proj: Linear,
    blocks: Vec<ConformerBlock>,
}

impl ConformerEncoder {
    pub fn new(s: &Scope, input_dim: usize, cfg: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(&s.pp("proj"), input_dim, cfg.width)?,
            blocks: (0..cfg.depth)
                .map(|i| ConformerBlock::new(&s.pp(format!("block{i}")), cfg))
                .collect::<Result<_>>()?,
        })
    }

    /// `(B, T, D_f)` → `(B, T, D)`; positions past `lengths` are ignored as keys.
    pub fn forward(&self, z_f: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let (_, t, _) = z_f.dims3()?;
        let mut x = self.proj.forward(z_f)?;
        if self.blocks.is_empty() {
            return Ok(x);
        }
        let key_mask = key_padding_mask(lengths, t, x.dtype(), x.device())?;
        let frames = frame_mask(lengths, t, x.dtype(), x.device())?;
        for b in &self.blocks {
            x = b.forward(&x, &key_mask, &frames)?;
        }
        Ok(x)
    }
}
