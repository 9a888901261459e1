//! Trains the desk-size recognizer (3D/2D convolutional front-end, Conformer
//! encoder, CTC head and attention decoder) to fit the toy training set,
//! then transcribes a few training clips.
//!
//! cargo run --example train_vsr -- [out_dir]

use std::path::PathBuf;

use synthvsr::eval::{Transcriber, VsrTranscriber};
use synthvsr::nn::{DType, ParamStore};
use synthvsr::pipeline::preprocess_manifest;
use synthvsr::tokenizer::train_vocab;
use synthvsr::toy::{self, ToySpec};
use synthvsr::trainer::{load_labeled, train_vsr, AugmentPolicy, VsrRun};
use synthvsr::vsr::{model_checkpoint, DecodeOptions, VsrConfig, VsrModel, VsrTrainConfig, VsrTrainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/vsr"));
    let corpus = toy::generate(&out.join("toy"), &ToySpec { test_utterances: 0, ..Default::default() })?;
    let real = preprocess_manifest(&corpus.raw, &out.join("clips"))?;
    let texts: Vec<String> = real.entries.iter().filter_map(|e| e.transcript.clone()).collect();
    let vocab = train_vocab(&texts, 48)?;
    let clips = load_labeled(&real, &vocab)?;

    let store = ParamStore::new(3, DType::F32);
    let model = VsrModel::new(&VsrConfig::desk(vocab.len()), &store)?;
    println!("desk recognizer: {} parameters, vocabulary {}", store.num_params(), vocab.len());
    let cfg = VsrTrainConfig { peak_lr: 1e-3, warmup_steps: 50, total_steps: 2000, weight_decay: 0.01, clip_norm: Some(5.0) };
    let mut trainer = VsrTrainer::new(model, &cfg)?;
    let mut run = VsrRun::new(3, 2000);
    run.augment = AugmentPolicy::off();
    run.frame_budget = 60;
    run.eval_every = 50;
    run.stop_wer = Some(0.05);
    run.out_dir = Some(out.join("run"));
    let summary = train_vsr(&mut trainer, &vocab, &[clips.clone()], &run)?;
    for (step, wer) in &summary.wer_trace {
        println!("step {step:>4}: training WER {wer:.3}");
    }
    model_checkpoint(trainer.model())?.save(out.join("recognizer.safetensors"))?;

    let t = VsrTranscriber { model: trainer.model().clone(), vocab, opts: DecodeOptions { beam: 4, max_len: None }, eval_crop: None };
    for c in clips.iter().take(3) {
        println!("{:<28} -> {}", c.transcript, t.transcribe(&c.clip)?);
    }
    Ok(())
}
