use candle_core::Tensor;

use super::config::FrontendConfig;
use crate::error::{Error, Result};
use crate::media::FRAME_SIZE;
use crate::nn::layers::{max_pool2x2, relu, temporal_unfold, BatchNorm, Conv2d};
use crate::nn::conv::conv2d;
use crate::nn::{Init, Scope};

const STEM_KT: usize = 5;
const STEM_K: usize = 7;

#[derive(Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(s: &Scope, inp: usize, out: usize, stride: usize) -> Result<Self> {
        let shortcut = if stride != 1 || inp != out {
            Some((Conv2d::new(&s.pp("down"), inp, out, 1, stride, 0, false)?, BatchNorm::new(&s.pp("down_bn"), out)?))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&s.pp("conv1"), inp, out, 3, stride, 1, false)?,
            bn1: BatchNorm::new(&s.pp("bn1"), out)?,
            conv2: Conv2d::new(&s.pp("conv2"), out, out, 3, 1, 1, false)?,
            bn2: BatchNorm::new(&s.pp("bn2"), out)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = relu(&self.bn1.forward(&self.conv1.forward(x)?, train)?)?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        relu(&(h + skip)?)
    }
}

/// 3D-convolutional stem plus per-frame residual trunk.
#[derive(Clone)]
pub struct Frontend {
    cfg: FrontendConfig,
    stem: Tensor,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
}

impl Frontend {
    pub fn new(s: &Scope, cfg: &FrontendConfig) -> Result<Self> {
        let c0 = cfg.stem_channels;
        let stem = s.param("stem.weight", &[c0, 1, STEM_KT, STEM_K, STEM_K], Init::FanIn(STEM_KT * STEM_K * STEM_K))?;
        let stem_bn = BatchNorm::new(&s.pp("stem_bn"), c0)?;
        let mut blocks = Vec::new();
        let mut inp = c0;
        for (i, (&out, &n)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
            for j in 0..n {
                let stride = if i > 0 && j == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(&s.pp(format!("layer{}.{j}", i + 1)), inp, out, stride)?);
                inp = out;
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            stem_bn,
            blocks,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim()
    }

    /// Clips of `(T_i, 96, 96)` intensities in [0, 1] → zero-padded features
    /// `(B, T_max, D_f)` and the per-clip frame counts.
    pub fn forward(&self, clips: &[Tensor], train: bool) -> Result<(Tensor, Vec<usize>)> {
        if clips.is_empty() {
            return Err(Error::Shape("front-end called on an empty batch".into()));
        }
        let dtype = self.stem.dtype();
        let mut unfolded = Vec::with_capacity(clips.len());
        let mut lengths = Vec::with_capacity(clips.len());
        for clip in clips {
            let (t, h, w) = clip.dims3()?;
            if (h, w) != (FRAME_SIZE, FRAME_SIZE) {
                return Err(Error::Shape(format!("front-end expects {FRAME_SIZE}×{FRAME_SIZE} frames, got {h}×{w}")));
            }
            if t == 0 {
                return Err(Error::Shape("front-end got a clip with no frames".into()));
            }
            let x = ((clip.to_dtype(dtype)? - self.cfg.pixel_mean)? / self.cfg.pixel_std)?;
            let p = self.cfg.input_pool;
            let (x, h, w) = if p > 1 {
                let x = x.reshape((t, h / p, p, w / p, p))?.mean(4)?.mean(2)?;
                (x, h / p, w / p)
            } else {
                (x, h, w)
            };
            let x = x.reshape((1, 1, t, h, w))?;
            unfolded.push(temporal_unfold(&x, STEM_KT, STEM_KT / 2)?);
            lengths.push(t);
        }
        let x = Tensor::cat(&unfolded, 0)?;
        let c0 = self.cfg.stem_channels;
        let w = self.stem.reshape((c0, STEM_KT, STEM_K, STEM_K))?;
        let mut h = conv2d(&x, &w, (2, 2), (STEM_K / 2, STEM_K / 2))?;
        h = relu(&self.stem_bn.forward(&h, train)?)?;
        h = max_pool2x2(&h)?;
        for b in &self.blocks {
            h = b.forward(&h, train)?;
        }
        let feats = h.mean(3)?.mean(2)?;
        let t_max = *lengths.iter().max().unwrap();
        let d = feats.dim(1)?;
        let mut rows = Vec::with_capacity(clips.len());
        let mut offset = 0;
        for &t in &lengths {
            let f = feats.narrow(0, offset, t)?;
            offset += t;
            rows.push(if t < t_max { f.pad_with_zeros(0, 0, t_max - t)? } else { f });
        }
        Ok((Tensor::stack(&rows, 0)?.reshape((clips.len(), t_max, d))?, lengths))
    }
}
