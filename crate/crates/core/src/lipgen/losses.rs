use candle_core::{DType, Tensor};

use super::config::LamLossWeights;
use crate::error::{Error, Result};

/// Discriminator outputs are clamped to [ε, 1 − ε] before taking logs.
pub const PROB_EPS: f64 = 1e-7;

fn guarded_log(p: &Tensor, complement: bool) -> Result<Tensor> {
    let vals = p.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if vals.is_empty() {
        return Err(Error::Invalid("discriminator output batch is empty".into()));
    }
    if let Some(bad) = vals.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Numerical(format!("discriminator output {bad} is not a probability")));
    }
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let p = if complement { (p.ones_like()? - p)? } else { p };
    Ok(p.log()?)
}

/// E[log D(real)] + E[log(1 − D(fake))], the value the discriminator maximizes.
pub fn disc_objective(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    Ok((guarded_log(d_real, false)?.mean_all()? + guarded_log(d_fake, true)?.mean_all()?)?)
}

/// Non-saturating generator term −E[log D(fake)].
pub fn generator_adv(d_fake: &Tensor) -> Result<Tensor> {
    Ok(guarded_log(d_fake, false)?.mean_all()?.neg()?)
}

/// Mean absolute difference between two clips of [0, 1] intensities.
pub fn reconstruction_loss(real: &Tensor, generated: &Tensor) -> Result<Tensor> {
    if real.dims() != generated.dims() {
        return Err(Error::Shape(format!(
            "reconstruction between shapes {:?} and {:?}",
            real.dims(),
            generated.dims()
        )));
    }
    Ok((real - generated)?.abs()?.mean_all()?)
}

/// Generator-side loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LamTerms {
    pub img: f64,
    pub seq: f64,
    pub rec: f64,
    pub vsr: f64,
}

/// λ_img·L_img + λ_seq·L_seq + λ_rec·L_rec + L_vsr (the perceptual term
/// carries its own weights).
pub fn lam_total(w: &LamLossWeights, t: &LamTerms) -> f64 {
    w.img * t.img + w.seq * t.seq + w.rec * t.rec + t.vsr
}

/// Tensor form of [`lam_total`]; `vsr` may be absent.
pub fn lam_total_loss(w: &LamLossWeights, img: &Tensor, seq: &Tensor, rec: &Tensor, vsr: Option<&Tensor>) -> Result<Tensor> {
    let mut total = ((img * w.img)? + (seq * w.seq)?)?;
    total = (total + (rec * w.rec)?)?;
    if let Some(v) = vsr {
        total = (total + v)?;
    }
    Ok(total)
}
