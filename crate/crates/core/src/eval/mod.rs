//! Scoring: WER, decoding of test manifests, the real/synthetic domain
//! mismatch grid, and CSV/SVG reports.

mod mismatch;
mod plots;
mod wer;

use std::collections::HashSet;
use std::path::Path;

use candle_core::DType;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::media::{read_clip, Manifest, VideoClip};
use crate::tokenizer::Vocab;
use crate::trainer::center_crop;
use crate::vsr::{clip_tensor, decode, DecodeOptions, VsrModel};
use crate::{Error, Result};

pub use mismatch::{build_synthetic_test, mismatch_assessment, MismatchCell, MismatchReport, SyntheticTestSet};
pub use plots::{emit_loss_plot, emit_plots, parse_bars_csv, Bar, BARS_CSV_HEADER};
pub use wer::{align, normalize, wer, EditCounts, WerReport, WerRow};

/// Anything that turns a mouth clip into text.
pub trait Transcriber {
    fn transcribe(&self, clip: &VideoClip) -> Result<String>;
}

/// Decodes with a recognizer and detokenizes with its vocabulary.
pub struct VsrTranscriber {
    pub model: VsrModel,
    pub vocab: Vocab,
    pub opts: DecodeOptions,
    /// Center crop applied before decoding (matching a random-crop training
    /// augmentation); `None` feeds frames unchanged.
    pub eval_crop: Option<usize>,
}

impl Transcriber for VsrTranscriber {
    fn transcribe(&self, clip: &VideoClip) -> Result<String> {
        let clip = match self.eval_crop {
            Some(size) => center_crop(clip, size)?,
            None => clip.clone(),
        };
        let hyp = decode(&self.model, &clip_tensor(&clip, DType::F32)?, self.opts)?;
        self.vocab.decode(&hyp.tokens)
    }
}

/// One decoded utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    pub id: String,
    pub hypothesis: String,
}

/// Decodes every entry with a video (restricted to `only` when given), in
/// manifest order.
pub fn decode_manifest(t: &dyn Transcriber, manifest: &Manifest, only: Option<&HashSet<String>>) -> Result<Vec<Decoded>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        if e.video_path.is_none() || only.is_some_and(|ids| !ids.contains(&e.id)) {
            continue;
        }
        let clip = read_clip(manifest.require(e, "video")?)?;
        out.push(Decoded {
            id: e.id.clone(),
            hypothesis: t.transcribe(&clip)?,
        });
    }
    Ok(out)
}

/// Scores hypotheses against the manifest transcripts.
pub fn score(manifest: &Manifest, hyps: &[Decoded]) -> Result<WerReport> {
    let rows = hyps
        .par_iter()
        .map(|d| {
            let e = manifest
                .get(&d.id)
                .ok_or_else(|| Error::Manifest(format!("hypothesis for unknown utterance `{}`", d.id)))?;
            let reference = e
                .transcript
                .as_deref()
                .ok_or_else(|| Error::Manifest(format!("utterance `{}` has no transcript", d.id)))?;
            Ok(WerRow::score(&d.id, reference, &d.hypothesis))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WerReport::new(rows))
}

/// Decodes and scores a test manifest.
pub fn evaluate(t: &dyn Transcriber, manifest: &Manifest, only: Option<&HashSet<String>>) -> Result<WerReport> {
    score(manifest, &decode_manifest(t, manifest, only)?)
}

pub fn save_hypotheses(hyps: &[Decoded], path: &Path) -> Result<()> {
    let mut s = String::new();
    for h in hyps {
        s.push_str(&serde_json::to_string(h)?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_hypotheses(path: &Path) -> Result<Vec<Decoded>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
