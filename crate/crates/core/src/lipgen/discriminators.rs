use candle_core::Tensor;

use super::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::media::FRAME_SIZE;
use crate::nn::layers::{leaky_relu, relu, sigmoid, BatchNorm, Conv2d, Conv3d, Gru, Linear};
use crate::nn::Scope;

/// Judges single frames conditioned on the identity frame. Outputs
/// probabilities in (0, 1).
#[derive(Clone)]
pub struct FrameDiscriminator {
    convs: Vec<(Conv2d, BatchNorm)>,
    head: Conv2d,
}

impl FrameDiscriminator {
    pub fn new(s: &Scope, cfg: &GeneratorConfig) -> Result<Self> {
        let mut convs = Vec::new();
        let mut inp = 2;
        for (i, c) in [32, 64, 128, 256].map(|c| cfg.ch(c)).into_iter().enumerate() {
            convs.push((
                Conv2d::new(&s.pp(format!("conv{i}")), inp, c, 4, 2, 1, false)?,
                BatchNorm::new(&s.pp(format!("bn{i}")), c)?,
            ));
            inp = c;
        }
        Ok(Self {
            convs,
            head: Conv2d::new(&s.pp("conv4"), inp, 1, 6, 1, 0, true)?,
        })
    }

    /// Frames `(N, 96, 96)` and identity frame `(96, 96)` → `(N,)`.
    pub fn forward(&self, frames: &Tensor, first_frame: &Tensor, train: bool) -> Result<Tensor> {
        let (n, h, w) = frames.dims3()?;
        if (h, w) != (FRAME_SIZE, FRAME_SIZE) {
            return Err(Error::Shape(format!("frame discriminator expects 96×96 frames, got {h}×{w}")));
        }
        let cond = first_frame.reshape((1, 1, h, w))?.broadcast_as((n, 1, h, w))?;
        let x = Tensor::cat(&[frames.reshape((n, 1, h, w))?, cond.contiguous()?], 1)?;
        let mut x = ((x * 2.0)? - 1.0)?;
        for (conv, bn) in &self.convs {
            x = leaky_relu(&bn.forward(&conv.forward(&x)?, train)?, 0.2)?;
        }
        sigmoid(&self.head.forward(&x)?.flatten_all()?)
    }
}

/// Judges the temporal coherence of whole clips: spatio-temporal
/// convolutions, a GRU over time and a linear classifier on its final state.
#[derive(Clone)]
pub struct SequenceDiscriminator {
    convs: Vec<(Conv3d, BatchNorm)>,
    head: Conv3d,
    gru: Gru,
    classifier: Linear,
}

impl SequenceDiscriminator {
    pub fn new(s: &Scope, cfg: &GeneratorConfig) -> Result<Self> {
        let chans = [64, 128, 256, 256].map(|c| cfg.ch(c));
        let mut convs = Vec::new();
        let mut inp = 1;
        for (i, &c) in chans.iter().enumerate() {
            let (kt, pt) = if i == 0 { (7, 3) } else { (1, 0) };
            convs.push((
                Conv3d::new(&s.pp(format!("conv{i}")), inp, c, kt, 4, 2, pt, 1, false)?,
                BatchNorm::new(&s.pp(format!("bn{i}")), c)?,
            ));
            inp = c;
        }
        let head_ch = cfg.ch(128);
        let hidden = cfg.ch(512);
        Ok(Self {
            convs,
            head: Conv3d::new(&s.pp("conv4"), inp, head_ch, 1, 6, 1, 0, 0, true)?,
            gru: Gru::new(&s.pp("gru"), head_ch, hidden, 1)?,
            classifier: Linear::new(&s.pp("classifier"), hidden, 1)?,
        })
    }

    /// Clips `(B, T, 96, 96)` → `(B,)`.
    pub fn forward(&self, clips: &Tensor, train: bool) -> Result<Tensor> {
        let (b, t, h, w) = clips.dims4()?;
        if (h, w) != (FRAME_SIZE, FRAME_SIZE) {
            return Err(Error::Shape(format!("sequence discriminator expects 96×96 frames, got {h}×{w}")));
        }
        let mut x = ((clips.reshape((b, 1, t, h, w))? * 2.0)? - 1.0)?;
        for (conv, bn) in &self.convs {
            x = relu(&bn.forward(&conv.forward(&x)?, train)?)?;
        }
        let x = self.head.forward(&x)?.tanh()?;
        let c = x.dim(1)?;
        let seq = x.reshape((b, c, t))?.transpose(1, 2)?.contiguous()?;
        let states = self.gru.forward(&seq)?;
        let last = states.narrow(1, t - 1, 1)?.squeeze(1)?;
        sigmoid(&self.classifier.forward(&last)?.flatten_all()?)
    }
}
