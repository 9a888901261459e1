use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Visual front-end: one 3D convolution (5×7×7) followed by a residual 2D
/// network applied per frame and global spatial average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub stem_channels: usize,
    /// Output channels of each residual stage; the first stage keeps the
    /// resolution, later stages halve it.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Normalization applied after scaling intensities to [0, 1].
    pub pixel_mean: f64,
    pub pixel_std: f64,
    /// Average-pooling factor applied to the frames before the stem.
    #[serde(default = "one")]
    pub input_pool: usize,
}

fn one() -> usize {
    1
}

impl FrontendConfig {
    /// The 18-layer residual network.
    pub fn resnet18() -> Self {
        Self {
            stem_channels: 64,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: vec![2, 2, 2, 2],
            pixel_mean: 0.421,
            pixel_std: 0.165,
            input_pool: 1,
        }
    }

    /// Four residual blocks at reduced width on 48×48 input.
    pub fn desk() -> Self {
        Self {
            stem_channels: 8,
            stage_channels: vec![8, 16, 32, 64],
            blocks_per_stage: vec![1, 1, 1, 1],
            input_pool: 2,
            ..Self::resnet18()
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&self.stem_channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub width: usize,
    pub ff_width: usize,
    pub heads: usize,
    /// Depthwise convolution kernel of the convolution module (odd).
    pub conv_kernel: usize,
    /// Relative distances beyond this share one learned bias.
    pub max_rel_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsrConfig {
    pub frontend: FrontendConfig,
    pub encoder: EncoderConfig,
    pub decoder_depth: usize,
    pub decoder_ff_width: usize,
    pub vocab_size: usize,
    /// Weight α of the CTC term in α·CTC + (1−α)·CE.
    pub ctc_weight: f64,
}

impl VsrConfig {
    pub fn base(vocab_size: usize) -> Self {
        Self {
            frontend: FrontendConfig::resnet18(),
            encoder: EncoderConfig {
                depth: 12,
                width: 768,
                ff_width: 3072,
                heads: 16,
                conv_kernel: 31,
                max_rel_pos: 64,
            },
            decoder_depth: 6,
            decoder_ff_width: 3072,
            vocab_size,
            ctc_weight: 0.1,
        }
    }

    pub fn large(vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                depth: 24,
                width: 1024,
                ff_width: 4096,
                heads: 16,
                conv_kernel: 31,
                max_rel_pos: 64,
            },
            decoder_depth: 9,
            decoder_ff_width: 4096,
            ..Self::base(vocab_size)
        }
    }

    pub fn small(vocab_size: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                depth: 12,
                width: 256,
                ff_width: 2048,
                heads: 4,
                conv_kernel: 31,
                max_rel_pos: 64,
            },
            decoder_depth: 6,
            decoder_ff_width: 2048,
            ..Self::base(vocab_size)
        }
    }

    /// CPU-trainable configuration used by the toy pipeline.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            frontend: FrontendConfig::desk(),
            encoder: EncoderConfig {
                depth: 4,
                width: 128,
                ff_width: 512,
                heads: 4,
                conv_kernel: 15,
                max_rel_pos: 32,
            },
            decoder_depth: 1,
            decoder_ff_width: 512,
            vocab_size,
            ctc_weight: 0.1,
        }
    }

    pub fn preset(name: &str, vocab_size: usize) -> Result<Self> {
        match name {
            "base" => Ok(Self::base(vocab_size)),
            "large" => Ok(Self::large(vocab_size)),
            "small" => Ok(Self::small(vocab_size)),
            "desk" => Ok(Self::desk(vocab_size)),
            other => Err(Error::Config(format!("unknown recognizer preset `{other}` (base, large, small, desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.width == 0 || e.heads == 0 || e.width % e.heads != 0 {
            return Err(Error::Config(format!("encoder width {} not divisible by {} heads", e.width, e.heads)));
        }
        if e.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!("conv kernel {} must be odd", e.conv_kernel)));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::Config(format!("ctc weight {} outside [0, 1]", self.ctc_weight)));
        }
        let f = &self.frontend;
        if f.stage_channels.len() != f.blocks_per_stage.len() {
            return Err(Error::Config("front-end stage channels and block counts differ in length".into()));
        }
        if f.input_pool == 0 || crate::media::FRAME_SIZE % f.input_pool != 0 {
            return Err(Error::Config(format!("input pooling {} must divide the frame size", f.input_pool)));
        }
        if f.pixel_std <= 0.0 {
            return Err(Error::Config("pixel std must be positive".into()));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config(format!("vocabulary of {} cannot hold the special tokens", self.vocab_size)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["base", "large", "small", "desk"] {
            VsrConfig::preset(name, 100).unwrap().validate().unwrap();
        }
        assert!(VsrConfig::preset("huge", 100).is_err());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = VsrConfig::desk(40);
        c.encoder.heads = 3;
        assert!(c.validate().is_err());
        c.encoder.heads = 4;
        c.ctc_weight = 1.5;
        assert!(c.validate().is_err());
    }
}
