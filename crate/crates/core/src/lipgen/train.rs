use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::config::{GeneratorConfig, LamLossWeights};
use super::discriminators::{FrameDiscriminator, SequenceDiscriminator};
use super::generator::Generator;
use super::losses::{disc_objective, generator_adv, lam_total_loss, reconstruction_loss};
use crate::bridge::{perceptual_loss, PerceptualWeights};
use crate::error::{Error, Result};
use crate::media::{RotationSequence, SpeechChunks, VideoClip};
use crate::nn::{Adam, AdamConfig, Checkpoint, ParamStore};
use crate::rng::derive_rng;
use crate::tokenizer::TokenSequence;
use crate::vsr::{clip_tensor, VsrModel};

pub const CHECKPOINT_KIND: &str = "lip-animation";

/// One audio-visual training clip: mouth frames with the speech chunk of
/// every frame, and the transcript when the perceptual loss needs it.
#[derive(Clone)]
pub struct LamClip {
    pub id: String,
    pub video: VideoClip,
    pub speech: SpeechChunks,
    pub transcript: Option<TokenSequence>,
}

impl LamClip {
    pub fn new(id: impl Into<String>, video: VideoClip, speech: SpeechChunks, transcript: Option<TokenSequence>) -> Result<Self> {
        let id = id.into();
        if video.num_frames() != speech.count() {
            return Err(Error::Shape(format!(
                "clip {id}: {} frames but {} speech chunks",
                video.num_frames(),
                speech.count()
            )));
        }
        Ok(Self {
            id,
            video,
            speech,
            transcript,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LamTrainConfig {
    pub seed: u64,
    /// Frames per sampled training window.
    pub window: usize,
    /// Frames per clip shown to the frame discriminator each step.
    pub disc_frames: usize,
    pub lr_generator: f64,
    pub lr_frame_disc: f64,
    pub lr_seq_disc: f64,
}

impl Default for LamTrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: 75,
            disc_frames: 4,
            lr_generator: 1e-4,
            lr_frame_disc: 1e-4,
            lr_seq_disc: 1e-5,
        }
    }
}

/// Losses of one alternating update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LamStepLog {
    pub step: u64,
    pub d_img: f64,
    pub d_seq: f64,
    pub g_img: f64,
    pub g_seq: f64,
    pub rec: f64,
    pub vsr: f64,
    pub total: f64,
}

impl LamStepLog {
    pub const CSV_HEADER: &'static str = "step,d_img,d_seq,g_img,g_seq,rec,vsr,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.d_img, self.d_seq, self.g_img, self.g_seq, self.rec, self.vsr, self.total
        )
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Generator, both discriminators and their optimizers.
pub struct LamTrainer {
    cfg: LamTrainConfig,
    gen_cfg: GeneratorConfig,
    weights: LamLossWeights,
    g_store: ParamStore,
    di_store: ParamStore,
    ds_store: ParamStore,
    generator: Generator,
    frame_disc: FrameDiscriminator,
    seq_disc: SequenceDiscriminator,
    opt_g: Adam,
    opt_di: Adam,
    opt_ds: Adam,
    vsr: Option<VsrModel>,
    step: u64,
}

impl LamTrainer {
    pub fn new(gen_cfg: &GeneratorConfig, weights: LamLossWeights, cfg: LamTrainConfig, vsr: Option<VsrModel>) -> Result<Self> {
        weights.validate()?;
        if weights.needs_recognizer() && vsr.is_none() {
            return Err(Error::Config(format!(
                "perceptual weights (visual {}, logits {}) need a frozen recognizer",
                weights.visual, weights.logits
            )));
        }
        if cfg.window == 0 || cfg.disc_frames == 0 {
            return Err(Error::Config("window and discriminator frame count must be positive".into()));
        }
        let g_store = ParamStore::new(crate::rng::derive_seed(cfg.seed, &[1]), DType::F32);
        let di_store = ParamStore::new(crate::rng::derive_seed(cfg.seed, &[2]), DType::F32);
        let ds_store = ParamStore::new(crate::rng::derive_seed(cfg.seed, &[3]), DType::F32);
        let generator = Generator::new(&g_store.root(), gen_cfg)?;
        let frame_disc = FrameDiscriminator::new(&di_store.root(), gen_cfg)?;
        let seq_disc = SequenceDiscriminator::new(&ds_store.root(), gen_cfg)?;
        let adam = |lr| AdamConfig { lr, ..AdamConfig::default() };
        Ok(Self {
            opt_g: Adam::new(g_store.trainable(), adam(cfg.lr_generator))?,
            opt_di: Adam::new(di_store.trainable(), adam(cfg.lr_frame_disc))?,
            opt_ds: Adam::new(ds_store.trainable(), adam(cfg.lr_seq_disc))?,
            cfg,
            gen_cfg: gen_cfg.clone(),
            weights,
            g_store,
            di_store,
            ds_store,
            generator,
            frame_disc,
            seq_disc,
            vsr,
            step: 0,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_store(&self) -> &ParamStore {
        &self.g_store
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One discriminator update (frame and sequence) followed by one
    /// generator update on a window drawn from `clips`.
    pub fn step(&mut self, clips: &[LamClip]) -> Result<LamStepLog> {
        if clips.is_empty() {
            return Err(Error::Invalid("no training clips".into()));
        }
        let mut rng = derive_rng(self.cfg.seed, &[0x1a3, self.step]);
        let clip = &clips[rng.random_range(0..clips.len())];
        let t = clip.video.num_frames();
        let n = self.cfg.window.min(t);
        let start = rng.random_range(0..=t - n);
        let window = clip.video.slice(start, n)?;
        let real = clip_tensor(&window, DType::F32)?;
        let first = real.get(0)?;
        let speech = clip.speech.window(start, n)?;
        let chunks = Tensor::from_vec(speech.as_slice().to_vec(), (n, speech.chunk_len()), &Device::Cpu)?;
        let rot = Tensor::from_vec(RotationSequence::identity(n).flatten(), (n, 9), &Device::Cpu)?;
        let k = self.cfg.disc_frames.min(n);
        let idx: Vec<u32> = crate::media::sample_frames(&window, k, &mut rng)?.into_iter().map(|i| i as u32).collect();
        let idx = Tensor::from_vec(idx, k, &Device::Cpu)?;

        let fake = self.generator.forward(&first, &chunks, &rot, true)?;
        let fake_d = fake.detach();

        let real_k = real.index_select(&idx, 0)?;
        let obj = disc_objective(
            &self.frame_disc.forward(&real_k, &first, true)?,
            &self.frame_disc.forward(&fake_d.index_select(&idx, 0)?, &first, true)?,
        )?;
        self.opt_di.step(&obj.neg()?.backward()?)?;
        let d_img = scalar(&obj)?;

        let obj = disc_objective(
            &self.seq_disc.forward(&real.unsqueeze(0)?, true)?,
            &self.seq_disc.forward(&fake_d.unsqueeze(0)?, true)?,
        )?;
        self.opt_ds.step(&obj.neg()?.backward()?)?;
        let d_seq = scalar(&obj)?;

        let g_img = generator_adv(&self.frame_disc.forward(&fake.index_select(&idx, 0)?, &first, true)?)?;
        let g_seq = generator_adv(&self.seq_disc.forward(&fake.unsqueeze(0)?, true)?)?;
        let rec = reconstruction_loss(&real, &fake)?;
        let vsr = match &self.vsr {
            Some(model) if self.weights.needs_recognizer() => {
                let transcript = clip.transcript.as_ref().ok_or_else(|| {
                    Error::Config(format!("clip {} has no transcript for the perceptual loss", clip.id))
                })?;
                let w = PerceptualWeights {
                    visual: self.weights.visual,
                    logits: self.weights.logits,
                };
                Some(perceptual_loss(model, &real, &fake, transcript, &w)?)
            }
            _ => None,
        };
        let total = lam_total_loss(&self.weights, &g_img, &g_seq, &rec, vsr.as_ref())?;
        self.opt_g.step(&total.backward()?)?;

        let log = LamStepLog {
            step: self.step,
            d_img,
            d_seq,
            g_img: scalar(&g_img)?,
            g_seq: scalar(&g_seq)?,
            rec: scalar(&rec)?,
            vsr: match &vsr {
                Some(v) => scalar(v)?,
                None => 0.0,
            },
            total: scalar(&total)?,
        };
        if !log.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite generator loss at step {}", self.step)));
        }
        self.step += 1;
        Ok(log)
    }

    /// Parameters, running statistics and optimizer state of all three networks.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        for (prefix, store) in [("g", &self.g_store), ("d_img", &self.di_store), ("d_seq", &self.ds_store)] {
            for (k, v) in store.tensors() {
                tensors.insert(format!("{prefix}.{k}"), v);
            }
        }
        tensors.extend(self.opt_g.state("opt_g")?);
        tensors.extend(self.opt_di.state("opt_d_img")?);
        tensors.extend(self.opt_ds.state("opt_d_seq")?);
        Ok(Checkpoint::new(CHECKPOINT_KIND, tensors)
            .with_meta("generator_width", self.gen_cfg.width.to_string())
            .with_meta("step", self.step.to_string())
            .with_meta("seed", self.cfg.seed.to_string()))
    }

    /// Restores a state written by [`LamTrainer::checkpoint`].
    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.kind() != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND} checkpoint, found `{}`", ckpt.kind())));
        }
        self.g_store.assign(&ckpt.sub("g"))?;
        self.di_store.assign(&ckpt.sub("d_img"))?;
        self.ds_store.assign(&ckpt.sub("d_seq"))?;
        self.opt_g.load_state("opt_g", &ckpt.tensors)?;
        self.opt_di.load_state("opt_d_img", &ckpt.tensors)?;
        self.opt_ds.load_state("opt_d_seq", &ckpt.tensors)?;
        self.step = ckpt
            .meta
            .get("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("checkpoint lacks a step counter".into()))?;
        Ok(())
    }
}

/// Loads the generator of a lip-animation checkpoint for inference.
pub fn load_generator(path: impl AsRef<Path>) -> Result<Generator> {
    let ckpt = Checkpoint::load(path.as_ref())?;
    generator_from_checkpoint(&ckpt)
}

pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<Generator> {
    if ckpt.kind() != CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!("expected a {CHECKPOINT_KIND} checkpoint, found `{}`", ckpt.kind())));
    }
    let width = ckpt
        .meta
        .get("generator_width")
        .and_then(|w| w.parse().ok())
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks generator_width".into()))?;
    let tensors = ckpt.sub("g");
    if tensors.is_empty() {
        return Err(Error::Checkpoint("checkpoint holds no generator tensors".into()));
    }
    let store = ParamStore::new(0, DType::F32).frozen();
    store.load(&tensors)?;
    let generator = Generator::new(&store.root(), &GeneratorConfig { width })?;
    let left = store.unclaimed();
    if !left.is_empty() {
        return Err(Error::Checkpoint(format!("generator checkpoint has unused tensors: {}", left.join(", "))));
    }
    Ok(generator)
}

/// Options of a full training run.
#[derive(Debug, Clone)]
pub struct LamRun {
    pub steps: u64,
    /// Checkpoint interval in steps (one epoch = one window per clip).
    pub checkpoint_every: u64,
    pub out_dir: PathBuf,
    /// Stop once the mean reconstruction loss of the last `smoothing` steps
    /// falls below this value.
    pub stop_below: Option<f64>,
    pub smoothing: usize,
}

/// Runs `run.steps` updates (continuing from the trainer's current step),
/// writing `loss.csv` and numbered checkpoints into `run.out_dir`. Returns
/// the per-step logs of this call.
pub fn train_lam(trainer: &mut LamTrainer, clips: &[LamClip], run: &LamRun) -> Result<Vec<LamStepLog>> {
    std::fs::create_dir_all(&run.out_dir).map_err(|e| Error::io(&run.out_dir, e))?;
    let csv_path = run.out_dir.join("loss.csv");
    let fresh = !csv_path.exists();
    let mut csv = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)
        .map_err(|e| Error::io(&csv_path, e))?;
    if fresh {
        writeln!(csv, "{}", LamStepLog::CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;
    }
    let mut logs = Vec::new();
    let every = run.checkpoint_every.max(1);
    while trainer.steps() < run.steps {
        let log = trainer.step(clips)?;
        writeln!(csv, "{}", log.csv_row()).map_err(|e| Error::io(&csv_path, e))?;
        logs.push(log);
        let done = trainer.steps();
        let smooth = run.smoothing.max(1);
        let converged = match run.stop_below {
            Some(limit) if logs.len() >= smooth => {
                (logs[logs.len() - smooth..].iter().map(|l| l.rec).sum::<f64>() / smooth as f64) < limit
            }
            _ => false,
        };
        if done % every == 0 || done == run.steps || converged {
            let path = run.out_dir.join(format!("lam-{done:06}.safetensors"));
            trainer.checkpoint()?.save(&path)?;
            log::info!("lam step {done}: rec {:.4} total {:.4} -> {}", log.rec, log.total, path.display());
        }
        if converged {
            break;
        }
    }
    Ok(logs)
}
