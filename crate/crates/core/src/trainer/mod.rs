//! Semi-supervised recognizer training: augmentation, mixing of real and
//! synthetic datasets, front-end transplant and the epoch loop.

mod augment;
mod recipe;
mod sampler;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;

use crate::eval::{WerReport, WerRow};
use crate::media::{read_clip, Manifest, VideoClip};
use crate::nn::Checkpoint;
use crate::rng::derive_rng;
use crate::tokenizer::{TokenSequence, Vocab};
use crate::vsr::{
    average_checkpoints, clip_tensor, decode, model_checkpoint, model_tensors, select_last, DecodeOptions, VsrModel,
    VsrStepLog, VsrTrainer,
};
use crate::{Error, Result};

pub use augment::{augment, center_crop, crop_resize, hflip, mask_frames, mean_frame, AugmentPolicy};
pub use recipe::{Recipe, Stage};
pub use sampler::{EpochSize, MixPolicy, MixedSampler, SampleRef};

/// Parameter-name prefix of the visual front-end inside a recognizer.
pub const FRONTEND_PREFIX: &str = "frontend.";

/// Copies the front-end tensors of a recognizer checkpoint into `model`,
/// leaving every other tensor untouched. Returns the replaced names.
pub fn init_frontend(model: &VsrModel, ckpt: &Checkpoint) -> Result<Vec<String>> {
    let frontend: BTreeMap<String, _> = model_tensors(ckpt)?
        .into_iter()
        .filter(|(k, _)| k.starts_with(FRONTEND_PREFIX))
        .collect();
    if frontend.is_empty() {
        return Err(Error::Checkpoint("checkpoint has no front-end tensors".into()));
    }
    let own: Vec<String> = model
        .store()
        .tensors()
        .into_keys()
        .filter(|k| k.starts_with(FRONTEND_PREFIX))
        .collect();
    let missing: Vec<&String> = own.iter().filter(|k| !frontend.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::Shape(format!(
            "checkpoint front-end lacks tensors: {}",
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    model.store().assign(&frontend)?;
    Ok(frontend.into_keys().collect())
}

/// A transcribed clip ready for training.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub id: String,
    pub clip: VideoClip,
    pub transcript: String,
    pub tokens: TokenSequence,
}

/// Loads every entry with a video and a transcript.
pub fn load_labeled(manifest: &Manifest, vocab: &Vocab) -> Result<Vec<LabeledClip>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        let (Some(_), Some(text)) = (&e.video_path, &e.transcript) else {
            continue;
        };
        out.push(LabeledClip {
            id: e.id.clone(),
            clip: read_clip(manifest.require(e, "video")?)?,
            transcript: text.clone(),
            tokens: vocab.encode(text),
        });
    }
    Ok(out)
}

/// Options of a recognizer training run; the optimizer schedule lives in the
/// trainer itself.
#[derive(Debug, Clone)]
pub struct VsrRun {
    pub seed: u64,
    pub total_steps: u64,
    pub augment: AugmentPolicy,
    /// `None` mixes datasets in proportion to their sizes.
    pub weights: Option<Vec<f64>>,
    pub frame_budget: usize,
    pub max_batch: usize,
    pub steps_per_epoch: usize,
    /// Checkpoints, `loss.csv` and `wer.csv` go here when set.
    pub out_dir: Option<PathBuf>,
    /// Average the last `k` epoch checkpoints into `averaged.safetensors`.
    pub average_last: usize,
    /// Score training-set WER every this many steps (0 disables).
    pub eval_every: u64,
    /// Stop once training-set WER is at or below this value.
    pub stop_wer: Option<f64>,
    pub decode: DecodeOptions,
}

impl VsrRun {
    pub fn new(seed: u64, total_steps: u64) -> Self {
        Self {
            seed,
            total_steps,
            augment: AugmentPolicy::default(),
            weights: None,
            frame_budget: 300,
            max_batch: 16,
            steps_per_epoch: 100,
            out_dir: None,
            average_last: 0,
            eval_every: 0,
            stop_wer: None,
            decode: DecodeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VsrRunSummary {
    pub logs: Vec<VsrStepLog>,
    /// (step, training-set WER) at each evaluation.
    pub wer_trace: Vec<(u64, f64)>,
    pub checkpoints: Vec<PathBuf>,
    pub averaged: Option<PathBuf>,
}

impl VsrRunSummary {
    pub fn last_wer(&self) -> Option<f64> {
        self.wer_trace.last().map(|w| w.1)
    }
}

/// Greedy/beam WER of `model` on labeled clips, with the evaluation crop.
pub fn labeled_wer(model: &VsrModel, vocab: &Vocab, clips: &[LabeledClip], crop: Option<usize>, opts: DecodeOptions) -> Result<WerReport> {
    let mut rows = Vec::with_capacity(clips.len());
    for c in clips {
        let clip = match crop {
            Some(s) => center_crop(&c.clip, s)?,
            None => c.clip.clone(),
        };
        let hyp = decode(model, &clip_tensor(&clip, model.dtype())?, opts)?;
        rows.push(WerRow::score(&c.id, &c.transcript, &vocab.decode(&hyp.tokens)?));
    }
    Ok(WerReport::new(rows))
}

fn open_log(path: &Path, header: &str) -> Result<std::fs::File> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    }
    Ok(f)
}

const AUGMENT_TAG: u64 = 0xa06;

/// Trains on the mixture of `datasets` (index 0 is treated as the real set
/// for training-WER checks) until `run.total_steps` or the WER target.
pub fn train_vsr(trainer: &mut VsrTrainer, vocab: &Vocab, datasets: &[Vec<LabeledClip>], run: &VsrRun) -> Result<VsrRunSummary> {
    run.augment.validate()?;
    let frames: Vec<Vec<usize>> = datasets.iter().map(|d| d.iter().map(|c| c.clip.num_frames()).collect()).collect();
    let mut sampler = MixedSampler::new(frames, run.weights.as_deref(), run.frame_budget, run.max_batch, run.seed)?;
    // a resumed trainer replays the draws it already consumed
    for _ in 0..trainer.steps() {
        sampler.next_batch();
    }
    let mut loss_log = None;
    let mut wer_log = None;
    if let Some(dir) = &run.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        loss_log = Some((dir.join("loss.csv"), open_log(&dir.join("loss.csv"), VsrStepLog::CSV_HEADER)?));
        wer_log = Some((dir.join("wer.csv"), open_log(&dir.join("wer.csv"), "step,train_wer")?));
    }
    let eval_crop = run.augment.crop;
    let mut summary = VsrRunSummary::default();
    let per_epoch = run.steps_per_epoch.max(1) as u64;
    while trainer.steps() < run.total_steps {
        let step = trainer.steps();
        let batch = sampler.next_batch();
        let mut clips = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (i, s) in batch.iter().enumerate() {
            let item = &datasets[s.dataset][s.index];
            let mut rng = derive_rng(run.seed, &[AUGMENT_TAG, step, i as u64]);
            let clip = augment(&item.clip, &run.augment, &mut rng)?;
            clips.push(clip_tensor(&clip, DType::F32)?);
            targets.push(item.tokens.clone());
        }
        let log = trainer.step(&clips, &targets)?;
        if let Some((p, f)) = &mut loss_log {
            writeln!(f, "{}", log.csv_row()).map_err(|e| Error::io(p.as_path(), e))?;
        }
        summary.logs.push(log);
        let done = trainer.steps();

        let mut stop = false;
        if run.eval_every > 0 && (done % run.eval_every == 0 || done == run.total_steps) {
            let w = labeled_wer(trainer.model(), vocab, &datasets[0], eval_crop, run.decode)?.wer();
            log::info!("vsr step {done}: loss {:.4} train WER {w:.4}", log.loss);
            if let Some((p, f)) = &mut wer_log {
                writeln!(f, "{done},{w}").map_err(|e| Error::io(p.as_path(), e))?;
            }
            summary.wer_trace.push((done, w));
            stop = run.stop_wer.is_some_and(|target| w <= target);
        }
        if let Some(dir) = &run.out_dir {
            if done % per_epoch == 0 || done == run.total_steps || stop {
                let path = dir.join(format!("vsr-{done:06}.safetensors"));
                model_checkpoint(trainer.model())?.with_meta("step", done.to_string()).save(&path)?;
                trainer.checkpoint()?.save(dir.join("last.safetensors"))?;
                summary.checkpoints.push(path);
            }
        }
        if stop {
            break;
        }
    }
    if let Some(dir) = &run.out_dir {
        if run.average_last > 0 && !summary.checkpoints.is_empty() {
            let chosen = select_last(&summary.checkpoints, run.average_last)?;
            let path = dir.join("averaged.safetensors");
            average_checkpoints(&chosen)?.save(&path)?;
            summary.averaged = Some(path);
        }
    }
    Ok(summary)
}
