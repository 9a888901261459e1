//! Lip animation training with the recognizer perceptual loss: a frozen
//! recognizer compares front-end features and decoder distributions of the
//! real and generated clips, and that distance joins the adversarial and
//! reconstruction terms.
//!
//! cargo run --example lam_perceptual -- [preset]   (vl | v | l | avox)

use synthvsr::bridge::{perceptual_loss, PerceptualWeights};
use synthvsr::lipgen::{train_lam, GeneratorConfig, LamLossWeights, LamRun, LamTrainConfig, LamTrainer};
use synthvsr::nn::{DType, ParamStore};
use synthvsr::pipeline::{lam_clips, preprocess_manifest};
use synthvsr::tokenizer::train_vocab;
use synthvsr::toy::{self, ToySpec};
use synthvsr::trainer::{load_labeled, train_vsr, AugmentPolicy, VsrRun};
use synthvsr::vsr::{clip_tensor, model_checkpoint, vsr_from_checkpoint, VsrConfig, VsrModel, VsrTrainConfig, VsrTrainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let preset = std::env::args().nth(1).unwrap_or_else(|| "vl".into());
    let weights = LamLossWeights::preset(&preset)?;
    let dir = tempfile::tempdir()?;
    let corpus = toy::generate(dir.path(), &ToySpec { test_utterances: 0, ..Default::default() })?;
    let real = preprocess_manifest(&corpus.raw, &dir.path().join("clips"))?;
    let texts: Vec<String> = real.entries.iter().filter_map(|e| e.transcript.clone()).collect();
    let vocab = train_vocab(&texts, 48)?;

    // the recognizer that supervises the generator
    let model = VsrModel::new(&VsrConfig::desk(vocab.len()), &ParamStore::new(6, DType::F32))?;
    let cfg = VsrTrainConfig { peak_lr: 1e-3, warmup_steps: 50, total_steps: 400, weight_decay: 0.01, clip_norm: Some(5.0) };
    let mut trainer = VsrTrainer::new(model, &cfg)?;
    let mut run = VsrRun::new(6, 400);
    run.augment = AugmentPolicy::off();
    run.frame_budget = 60;
    run.eval_every = 50;
    run.stop_wer = Some(0.1);
    train_vsr(&mut trainer, &vocab, &[load_labeled(&real, &vocab)?], &run)?;
    let frozen = vsr_from_checkpoint(&model_checkpoint(trainer.model())?, true)?;

    let clips = lam_clips(&real, Some(&vocab))?;
    let lam_cfg = LamTrainConfig { seed: 6, window: 8, disc_frames: 2, lr_generator: 1e-4, ..Default::default() };
    let mut lam = LamTrainer::new(&GeneratorConfig { width: 0.125 }, weights, lam_cfg, Some(frozen.clone()))?;
    let logs = train_lam(
        &mut lam,
        &clips,
        &LamRun { steps: 150, checkpoint_every: 150, out_dir: dir.path().join("lam"), stop_below: None, smoothing: 10 },
    )?;
    for l in logs.iter().step_by(25) {
        println!("step {:>3}: reconstruction {:.4}, perceptual {:.4}, total {:.3}", l.step, l.rec, l.vsr, l.total);
    }

    let c = &clips[0];
    let rot = synthvsr::media::RotationSequence::identity(c.speech.count());
    let fake = lam.generator().generate(c.video.frame(0), &c.speech, &rot, c.video.fps())?;
    let w = PerceptualWeights { visual: weights.visual, logits: weights.logits };
    let d = perceptual_loss(
        &frozen,
        &clip_tensor(&c.video, DType::F32)?,
        &clip_tensor(&fake, DType::F32)?,
        c.transcript.as_ref().expect("transcribed clip"),
        &w,
    )?;
    println!("perceptual distance on {} with preset {preset}: {:.4}", c.id, d.to_scalar::<f32>()?);
    Ok(())
}
