//! Clip-level augmentations for recognizer training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::media::{resize_bilinear, VideoClip, FRAME_PIXELS, FRAME_SIZE};
use crate::{Error, Result};

/// Training-time augmentation settings.
///
/// The crop size and the time-mask limits are defaults of this crate; tune
/// them per corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub hflip_prob: f64,
    /// Side of the random crop, resized back to 96×96. `None` disables it.
    pub crop: Option<usize>,
    pub max_masks: usize,
    /// Longest mask as a fraction of the clip length.
    pub max_mask_fraction: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { hflip_prob: 0.5, crop: Some(88), max_masks: 1, max_mask_fraction: 0.4 }
    }
}

impl AugmentPolicy {
    pub fn off() -> Self {
        Self { hflip_prob: 0.0, crop: None, max_masks: 0, max_mask_fraction: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!("hflip probability {} outside [0, 1]", self.hflip_prob)));
        }
        if !(0.0..=1.0).contains(&self.max_mask_fraction) {
            return Err(Error::Config(format!("mask fraction {} outside [0, 1]", self.max_mask_fraction)));
        }
        if let Some(c) = self.crop {
            if c == 0 || c > FRAME_SIZE {
                return Err(Error::Config(format!("crop size {c} must be in 1..={FRAME_SIZE}")));
            }
        }
        Ok(())
    }
}

/// Mirrors every frame left to right.
pub fn hflip(clip: &VideoClip) -> VideoClip {
    let mut out = clip.clone();
    for t in 0..out.num_frames() {
        for row in out.frame_mut(t).chunks_exact_mut(FRAME_SIZE) {
            row.reverse();
        }
    }
    out
}

/// Crops a `size`×`size` window at (`x`, `y`) from every frame and resizes it
/// back to 96×96.
pub fn crop_resize(clip: &VideoClip, x: usize, y: usize, size: usize) -> Result<VideoClip> {
    if size == 0 || x + size > FRAME_SIZE || y + size > FRAME_SIZE {
        return Err(Error::Invalid(format!("crop {size}@({x},{y}) exceeds the frame")));
    }
    if size == FRAME_SIZE {
        return Ok(clip.clone());
    }
    let mut data = Vec::with_capacity(clip.num_frames() * FRAME_PIXELS);
    let mut window = vec![0u8; size * size];
    for t in 0..clip.num_frames() {
        let frame = clip.frame(t);
        for r in 0..size {
            let src = (y + r) * FRAME_SIZE + x;
            window[r * size..(r + 1) * size].copy_from_slice(&frame[src..src + size]);
        }
        data.extend(resize_bilinear(&window, size, size, FRAME_SIZE, FRAME_SIZE));
    }
    VideoClip::new(data, clip.fps())
}

/// Evaluation counterpart of the random crop.
pub fn center_crop(clip: &VideoClip, size: usize) -> Result<VideoClip> {
    let off = FRAME_SIZE.saturating_sub(size) / 2;
    crop_resize(clip, off, off, size)
}

/// Per-pixel mean over all frames, rounded.
pub fn mean_frame(clip: &VideoClip) -> Vec<u8> {
    let mut acc = vec![0u64; FRAME_PIXELS];
    for t in 0..clip.num_frames() {
        for (a, &p) in acc.iter_mut().zip(clip.frame(t)) {
            *a += p as u64;
        }
    }
    let n = clip.num_frames() as u64;
    acc.into_iter().map(|a| ((a + n / 2) / n) as u8).collect()
}

/// Replaces frames `start..start + len` (clamped to the clip) with the clip
/// mean frame.
pub fn mask_frames(clip: &VideoClip, start: usize, len: usize) -> VideoClip {
    let mean = mean_frame(clip);
    let mut out = clip.clone();
    for t in start..(start + len).min(clip.num_frames()) {
        out.frame_mut(t).copy_from_slice(&mean);
    }
    out
}

/// Applies the policy: flip, crop, then time masking.
pub fn augment<R: Rng + ?Sized>(clip: &VideoClip, p: &AugmentPolicy, rng: &mut R) -> Result<VideoClip> {
    let mut out = if p.hflip_prob > 0.0 && rng.random_bool(p.hflip_prob) { hflip(clip) } else { clip.clone() };
    if let Some(size) = p.crop.filter(|&s| s < FRAME_SIZE) {
        let x = rng.random_range(0..=FRAME_SIZE - size);
        let y = rng.random_range(0..=FRAME_SIZE - size);
        out = crop_resize(&out, x, y, size)?;
    }
    let t = out.num_frames();
    let max_len = (p.max_mask_fraction * t as f64).floor() as usize;
    if max_len > 0 {
        // Spans are drawn against the pre-mask clip so the fill is the mean
        // of the unmasked content.
        let mean = mean_frame(&out);
        for _ in 0..p.max_masks {
            let len = rng.random_range(0..=max_len);
            let start = rng.random_range(0..=t - len);
            for f in start..start + len {
                out.frame_mut(f).copy_from_slice(&mean);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(t: usize) -> VideoClip {
        let data = (0..t * FRAME_PIXELS).map(|i| ((i * 7 + i / FRAME_PIXELS * 31) % 251) as u8).collect();
        VideoClip::new(data, 25.0).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let c = ramp(3);
        assert_ne!(hflip(&c), c);
        assert_eq!(hflip(&hflip(&c)), c);
    }

    #[test]
    fn all_off_is_identity() {
        let c = ramp(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&c, &AugmentPolicy::off(), &mut rng).unwrap(), c);
    }

    #[test]
    fn mask_hits_exactly_the_span() {
        let c = ramp(20);
        let mean = mean_frame(&c);
        let m = mask_frames(&c, 10, 3);
        for t in 0..20 {
            if (10..13).contains(&t) {
                assert_eq!(m.frame(t), &mean[..]);
            } else {
                assert_eq!(m.frame(t), c.frame(t));
            }
        }
    }

    #[test]
    fn shape_is_preserved() {
        let c = ramp(11);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let a = augment(&c, &AugmentPolicy::default(), &mut rng).unwrap();
            assert_eq!(a.num_frames(), 11);
            assert_eq!(a.as_bytes().len(), c.as_bytes().len());
        }
    }

    #[test]
    fn full_size_crop_is_identity() {
        let c = ramp(2);
        assert_eq!(center_crop(&c, FRAME_SIZE).unwrap(), c);
        assert!(crop_resize(&c, 10, 0, 90).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy { crop: Some(97), ..Default::default() }.validate().is_err());
        assert!(AugmentPolicy { max_mask_fraction: 1.5, ..Default::default() }.validate().is_err());
        assert!(AugmentPolicy::default().validate().is_ok());
    }
}
