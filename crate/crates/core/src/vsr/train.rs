use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};

use super::config::VsrConfig;
use super::model::VsrModel;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, AdamConfig, Checkpoint, CosineWarmup, LrSchedule, ParamStore};
use crate::tokenizer::TokenSequence;

pub const CHECKPOINT_KIND: &str = "recognizer";
const MODEL_PREFIX: &str = "model";

#[derive(Debug, Clone, PartialEq)]
pub struct VsrTrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VsrStepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub ctc: f64,
    pub ce: f64,
}

impl VsrStepLog {
    pub const CSV_HEADER: &'static str = "step,lr,loss,ctc,ce";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.lr, self.loss, self.ctc, self.ce)
    }
}

/// AdamW with a warm-up + cosine schedule over a recognizer.
pub struct VsrTrainer {
    model: VsrModel,
    opt: Adam,
    schedule: CosineWarmup,
    clip_norm: Option<f64>,
    step: u64,
}

impl VsrTrainer {
    pub fn new(model: VsrModel, cfg: &VsrTrainConfig) -> Result<Self> {
        if model.store().is_frozen() {
            return Err(Error::Config("cannot train a recognizer from a frozen store".into()));
        }
        let opt = Adam::new(
            model.store().trainable(),
            AdamConfig {
                lr: 0.0,
                weight_decay: cfg.weight_decay,
                ..AdamConfig::default()
            },
        )?;
        Ok(Self {
            model,
            opt,
            schedule: CosineWarmup {
                peak: cfg.peak_lr,
                warmup_steps: cfg.warmup_steps,
                total_steps: cfg.total_steps.max(1),
                floor: 0.0,
            },
            clip_norm: cfg.clip_norm,
            step: 0,
        })
    }

    pub fn model(&self) -> &VsrModel {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, clips: &[Tensor], targets: &[TokenSequence]) -> Result<VsrStepLog> {
        // the update at index `step` uses the rate after `step + 1` schedule ticks
        let lr = self.schedule.lr(self.step as usize + 1);
        self.opt.set_lr(lr);
        let loss = self.model.loss(clips, targets, true)?;
        let mut grads = loss.total.backward()?;
        if let Some(max) = self.clip_norm {
            clip_grad_norm(&mut grads, &self.model.store().trainable(), max)?;
        }
        self.opt.step(&grads)?;
        let s = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        let log = VsrStepLog {
            step: self.step,
            lr,
            loss: s(&loss.total)?,
            ctc: s(&loss.ctc)?,
            ce: s(&loss.ce)?,
        };
        if !log.loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite recognizer loss at step {}", self.step)));
        }
        self.step += 1;
        Ok(log)
    }

    /// Model tensors plus optimizer state.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = model_checkpoint(&self.model)?;
        ck.tensors.extend(self.opt.state("opt")?);
        Ok(ck.with_meta("step", self.step.to_string()))
    }

    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.model.store().assign(&ckpt.sub(MODEL_PREFIX))?;
        self.opt.load_state("opt", &ckpt.tensors)?;
        self.step = ckpt
            .meta
            .get("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("checkpoint lacks a step counter".into()))?;
        Ok(())
    }
}

/// Parameters and running statistics of `model`, with its configuration.
pub fn model_checkpoint(model: &VsrModel) -> Result<Checkpoint> {
    let tensors: BTreeMap<String, Tensor> = model
        .store()
        .tensors()
        .into_iter()
        .map(|(k, v)| (format!("{MODEL_PREFIX}.{k}"), v))
        .collect();
    Ok(Checkpoint::new(CHECKPOINT_KIND, tensors).with_meta("config", serde_json::to_string(model.config())?))
}

/// Model tensors (without the `model.` prefix) of a recognizer checkpoint.
pub fn model_tensors(ckpt: &Checkpoint) -> Result<BTreeMap<String, Tensor>> {
    if ckpt.kind() != CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND} checkpoint, found `{}`", ckpt.kind())));
    }
    let tensors = ckpt.sub(MODEL_PREFIX);
    if tensors.is_empty() {
        return Err(Error::Checkpoint("checkpoint holds no recognizer tensors".into()));
    }
    Ok(tensors)
}

pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<VsrConfig> {
    let text = ckpt
        .meta
        .get("config")
        .ok_or_else(|| Error::Checkpoint("recognizer checkpoint lacks its config".into()))?;
    Ok(serde_json::from_str(text)?)
}

/// Rebuilds a recognizer from a checkpoint; `frozen` models track no gradients.
pub fn vsr_from_checkpoint(ckpt: &Checkpoint, frozen: bool) -> Result<VsrModel> {
    let cfg = checkpoint_config(ckpt)?;
    let store = ParamStore::new(0, DType::F32);
    let store = if frozen { store.frozen() } else { store };
    store.load(&model_tensors(ckpt)?)?;
    let model = VsrModel::new(&cfg, &store)?;
    let left = store.unclaimed();
    if !left.is_empty() {
        return Err(Error::Checkpoint(format!("recognizer checkpoint has unused tensors: {}", left.join(", "))));
    }
    Ok(model)
}

pub fn load_vsr(path: impl AsRef<Path>, frozen: bool) -> Result<VsrModel> {
    vsr_from_checkpoint(&Checkpoint::load(path)?, frozen)
}
