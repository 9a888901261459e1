use candle_core::{DType, Device, Tensor};

use super::attention::{causal_mask, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::nn::layers::{relu, Embedding, LayerNorm, Linear};
use crate::nn::Scope;

/// Sinusoidal absolute position table `(T, D)`.
pub fn sinusoidal_positions(t: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut vals = vec![0f64; t * dim];
    for pos in 0..t {
        for i in 0..dim / 2 {
            let freq = (10000f64).powf(-((2 * i) as f64) / dim as f64);
            vals[pos * dim + 2 * i] = (pos as f64 * freq).sin();
            vals[pos * dim + 2 * i + 1] = (pos as f64 * freq).cos();
        }
    }
    Ok(Tensor::from_vec(vals, (t, dim), device)?.to_dtype(dtype)?)
}

#[derive(Clone)]
struct DecoderLayer {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff_up: Linear,
    ff_down: Linear,
}

impl DecoderLayer {
    fn new(s: &Scope, dim: usize, heads: usize, ff: usize) -> Result<Self> {
        Ok(Self {
            self_norm: LayerNorm::new(&s.pp("self_norm"), dim)?,
            self_attn: MultiHeadAttention::new(&s.pp("self_attn"), dim, heads)?,
            cross_norm: LayerNorm::new(&s.pp("cross_norm"), dim)?,
            cross_attn: MultiHeadAttention::new(&s.pp("cross_attn"), dim, heads)?,
            ff_norm: LayerNorm::new(&s.pp("ff_norm"), dim)?,
            ff_up: Linear::new(&s.pp("ff_up"), dim, ff)?,
            ff_down: Linear::new(&s.pp("ff_down"), ff, dim)?,
        })
    }

    fn forward(&self, x: &Tensor, memory: &Tensor, self_mask: &Tensor, memory_mask: &Tensor) -> Result<Tensor> {
        let h = self.self_norm.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h, Some(self_mask))?)?;
        let h = self.cross_norm.forward(&x)?;
        let x = (&x + self.cross_attn.forward(&h, memory, Some(memory_mask))?)?;
        let h = self.ff_norm.forward(&x)?;
        Ok((&x + self.ff_down.forward(&relu(&self.ff_up.forward(&h)?)?)?)?)
    }
}

/// Autoregressive pre-LayerNorm Transformer decoder with absolute sinusoidal
/// positions.
#[derive(Clone)]
pub struct TransformerDecoder {
    embed: Embedding,
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
    out: Linear,
    dim: usize,
    vocab: usize,
}

impl TransformerDecoder {
    pub fn new(s: &Scope, vocab: usize, dim: usize, heads: usize, ff: usize, depth: usize) -> Result<Self> {
        Ok(Self {
            embed: Embedding::new(&s.pp("embed"), vocab, dim)?,
            layers: (0..depth)
                .map(|i| DecoderLayer::new(&s.pp(format!("layer{i}")), dim, heads, ff))
                .collect::<Result<_>>()?,
            final_norm: LayerNorm::new(&s.pp("final_norm"), dim)?,
            out: Linear::new(&s.pp("out"), dim, vocab)?,
            dim,
            vocab,
        })
    }

    /// Logits `(B, L, V)` for prefixes `(B, L)` of token ids. `memory_mask`
    /// is the additive key mask over encoder frames, `(B, 1, 1, T)`.
    pub fn forward(&self, prefixes: &Tensor, memory: &Tensor, memory_mask: &Tensor) -> Result<Tensor> {
        let (_, l) = prefixes.dims2()?;
        let max_id = prefixes.max_all()?.to_scalar::<u32>()? as usize;
        if max_id >= self.vocab {
            return Err(Error::Tokenizer(format!("token id {max_id} outside vocabulary of {}", self.vocab)));
        }
        let dtype = memory.dtype();
        let device = memory.device();
        let emb = (self.embed.forward(prefixes)? * (self.dim as f64).sqrt())?;
        let mut x = emb.broadcast_add(&sinusoidal_positions(l, self.dim, dtype, device)?)?;
        let self_mask = causal_mask(l, dtype, device)?;
        for layer in &self.layers {
            x = layer.forward(&x, memory, &self_mask, memory_mask)?;
        }
        self.out.forward(&self.final_norm.forward(&x)?)
    }
}
