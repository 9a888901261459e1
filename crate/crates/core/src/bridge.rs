//! Perceptual loss from a frozen recognizer, coupling lip-animation training
//! to what the recognizer sees: an L1 distance between front-end features
//! plus a KL divergence between teacher-forced decoder distributions.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::softmax;
use crate::tokenizer::TokenSequence;
use crate::vsr::{teacher_forcing_pairs, VsrModel};

/// Probability floor inside the KL logarithms.
pub const KL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PerceptualWeights {
    pub visual: f64,
    pub logits: f64,
}

impl PerceptualWeights {
    pub fn is_inert(&self) -> bool {
        self.visual == 0.0 && self.logits == 0.0
    }
}

/// Mean over rows of KL(p ‖ q) for probability rows in the last dimension.
/// Both sides are floored at [`KL_EPS`] inside the logarithms, so zero
/// entries of `p` contribute nothing and KL(p ‖ p) is exactly zero.
pub fn kl_rows(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    let log_p = p.clamp(KL_EPS, 1.0)?.log()?;
    let log_q = q.clamp(KL_EPS, 1.0)?.log()?;
    let last = p.rank() - 1;
    Ok((p * (log_p - log_q)?)?.sum(last)?.mean_all()?)
}

/// Weighted perceptual distance between a real clip and a synthetic clip
/// `(T, 96, 96)` sharing one transcript. Gradients reach only `synth`; the
/// recognizer must come from a frozen parameter store.
pub fn perceptual_loss(
    vsr: &VsrModel,
    real: &Tensor,
    synth: &Tensor,
    transcript: &TokenSequence,
    w: &PerceptualWeights,
) -> Result<Tensor> {
    let (tr, _, _) = real.dims3()?;
    let (ts, _, _) = synth.dims3()?;
    if tr != ts {
        return Err(Error::Shape(format!("real clip has {tr} frames but synthetic clip has {ts}")));
    }
    if !vsr.store().is_frozen() {
        return Err(Error::Config("perceptual loss needs a recognizer loaded from a frozen store".into()));
    }
    let dtype = vsr.dtype();
    let zero = Tensor::zeros((), dtype, synth.device())?;
    if w.is_inert() {
        return Ok(zero);
    }
    let (inputs, _) = teacher_forcing_pairs(std::slice::from_ref(transcript), vsr.specials());
    let side = |clip: &Tensor| -> Result<(Tensor, Tensor)> {
        let (z_f, lengths) = vsr.frontend(&[clip.to_dtype(dtype)?], false)?;
        let z_e = vsr.encode(&z_f, &lengths)?;
        let logits = vsr.decoder_logits(&z_e, &lengths, &inputs)?;
        Ok((z_f, logits))
    };
    let (zf_r, y_r) = side(&real.detach())?;
    let (zf_r, y_r) = (zf_r.detach(), y_r.detach());
    let (zf_s, y_s) = side(synth)?;
    let mut loss = zero;
    if w.visual > 0.0 {
        loss = (loss + ((zf_r - zf_s)?.abs()?.mean_all()? * w.visual)?)?;
    }
    if w.logits > 0.0 {
        let kl = kl_rows(&softmax(&y_r, 2)?, &softmax(&y_s, 2)?)?;
        loss = (loss + (kl * w.logits)?)?;
    }
    Ok(loss)
}
