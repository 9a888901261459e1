//! Saves a checkpoint at the end of every epoch and averages the last few
//! into the recognizer used for decoding.
//!
//! cargo run --example average_checkpoints -- [out_dir]

use std::path::PathBuf;

use synthvsr::nn::{DType, ParamStore};
use synthvsr::pipeline::preprocess_manifest;
use synthvsr::tokenizer::train_vocab;
use synthvsr::toy::{self, ToySpec};
use synthvsr::trainer::{labeled_wer, load_labeled, train_vsr, AugmentPolicy, VsrRun};
use synthvsr::vsr::{load_vsr, DecodeOptions, VsrConfig, VsrModel, VsrTrainConfig, VsrTrainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/average"));
    let corpus = toy::generate(&out.join("toy"), &ToySpec { test_utterances: 0, ..Default::default() })?;
    let real = preprocess_manifest(&corpus.raw, &out.join("clips"))?;
    let texts: Vec<String> = real.entries.iter().filter_map(|e| e.transcript.clone()).collect();
    let vocab = train_vocab(&texts, 48)?;
    let clips = load_labeled(&real, &vocab)?;

    let model = VsrModel::new(&VsrConfig::desk(vocab.len()), &ParamStore::new(5, DType::F32))?;
    let cfg = VsrTrainConfig { peak_lr: 1e-3, warmup_steps: 50, total_steps: 240, weight_decay: 0.01, clip_norm: Some(5.0) };
    let mut trainer = VsrTrainer::new(model, &cfg)?;
    let mut run = VsrRun::new(5, 240);
    run.augment = AugmentPolicy::off();
    run.frame_budget = 60;
    run.steps_per_epoch = 20;
    run.average_last = 10;
    run.out_dir = Some(out.join("run"));
    let summary = train_vsr(&mut trainer, &vocab, &[clips.clone()], &run)?;
    println!("{} epoch checkpoints", summary.checkpoints.len());

    let opts = DecodeOptions::default();
    let last = labeled_wer(trainer.model(), &vocab, &clips, None, opts)?;
    println!("last checkpoint:     training WER {:.3}", last.wer());
    if let Some(avg) = &summary.averaged {
        let averaged = load_vsr(avg, true)?;
        let report = labeled_wer(&averaged, &vocab, &clips, None, opts)?;
        println!("average of last 10:  training WER {:.3} ({})", report.wer(), avg.display());
    }
    Ok(())
}
