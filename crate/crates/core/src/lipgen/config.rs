use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel layout of the generator and both discriminators. `width` scales
/// every channel count of the full-size networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub width: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { width: 0.25 }
    }
}

impl GeneratorConfig {
    pub fn full() -> Self {
        Self { width: 1.0 }
    }

    pub(crate) fn ch(&self, full: usize) -> usize {
        ((full as f64 * self.width).round() as usize).max(1)
    }

    /// Image encoder channels for the four strided layers and the embedding.
    pub fn image_channels(&self) -> [usize; 5] {
        [64, 128, 256, 512, 512].map(|c| self.ch(c))
    }

    /// Speech encoder conv channels and the GRU width.
    pub fn speech_channels(&self) -> ([usize; 6], usize) {
        ([16, 32, 64, 128, 256, 256].map(|c| self.ch(c)), self.ch(256))
    }

    pub fn style_dim(&self) -> usize {
        self.image_channels()[4] + self.speech_channels().1 + 9
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("generator width {} must be positive", self.width)));
        }
        Ok(())
    }
}

/// Coefficients of the lip-animation objective: adversarial frame and
/// sequence terms, reconstruction, and the recognizer perceptual terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LamLossWeights {
    pub img: f64,
    pub seq: f64,
    pub rec: f64,
    pub visual: f64,
    pub logits: f64,
}

impl LamLossWeights {
    pub fn baseline() -> Self {
        Self {
            img: 1.0,
            seq: 0.2,
            rec: 300.0,
            visual: 0.0,
            logits: 0.0,
        }
    }

    /// Perceptual loss on both front-end features and decoder logits.
    pub fn visual_logits() -> Self {
        Self {
            visual: 250.0,
            logits: 10.0,
            ..Self::baseline()
        }
    }

    /// Front-end features only.
    pub fn visual_only() -> Self {
        Self {
            visual: 250.0,
            logits: 0.0,
            ..Self::baseline()
        }
    }

    /// Decoder logits only.
    pub fn logits_only() -> Self {
        Self {
            visual: 0.0,
            logits: 10.0,
            ..Self::baseline()
        }
    }

    /// Weights used with the recognizer trained on additional pseudo-labeled data.
    pub fn avox() -> Self {
        Self {
            visual: 500.0,
            logits: 10.0,
            ..Self::baseline()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Self::baseline()),
            "vl" => Ok(Self::visual_logits()),
            "v" => Ok(Self::visual_only()),
            "l" => Ok(Self::logits_only()),
            "avox" => Ok(Self::avox()),
            other => Err(Error::Config(format!("unknown loss preset `{other}` (baseline, vl, v, l, avox)"))),
        }
    }

    pub fn needs_recognizer(&self) -> bool {
        self.visual > 0.0 || self.logits > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("img", self.img),
            ("seq", self.seq),
            ("rec", self.rec),
            ("visual", self.visual),
            ("logits", self.logits),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}
