//! Builds a synthetic lip-reading set: every transcribed speech clip is
//! animated on two faces drawn from the face pool by a briefly trained
//! generator.
//!
//! cargo run --example gen_synth -- [out_dir]

use std::path::PathBuf;

use synthvsr::lipgen::{train_lam, GeneratorConfig, LamLossWeights, LamRun, LamTrainConfig, LamTrainer};
use synthvsr::pipeline::{lam_clips, preprocess_manifest};
use synthvsr::synthgen::{build_synth_dataset, SynthJob};
use synthvsr::toy::{self, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/synth"));
    let corpus = toy::generate(&out.join("toy"), &ToySpec { train_utterances: 5, test_utterances: 0, ..Default::default() })?;
    let clips = lam_clips(&preprocess_manifest(&corpus.raw, &out.join("clips"))?, None)?;

    let cfg = LamTrainConfig { seed: 2, window: 8, disc_frames: 2, lr_generator: 1e-4, ..Default::default() };
    let mut trainer = LamTrainer::new(&GeneratorConfig { width: 0.125 }, LamLossWeights::baseline(), cfg, None)?;
    let run = LamRun { steps: 100, checkpoint_every: 100, out_dir: out.join("lam"), stop_below: Some(0.06), smoothing: 10 };
    train_lam(&mut trainer, &clips, &run)?;
    let generator = out.join("generator.safetensors");
    trainer.checkpoint()?.save(&generator)?;

    let mut job = SynthJob::new(&generator, corpus.speech.clone(), corpus.faces.clone(), out.join("synthetic"), 7);
    job.faces_per_clip = 2;
    let report = build_synth_dataset(&job)?;
    println!(
        "{} speech clips × {} faces -> {} synthetic clips ({} generated, {} reused, {} failed)",
        corpus.speech.len(),
        job.faces_per_clip,
        report.manifest.len(),
        report.generated,
        report.reused,
        report.failures.len()
    );
    for e in report.manifest.entries.iter().take(4) {
        println!("  {} speech {:?} face {:?}: {:?}", e.id, e.speech_id, e.face_id, e.transcript.as_deref().unwrap_or(""));
    }
    // a second run reuses every clip whose inputs are unchanged
    let again = build_synth_dataset(&job)?;
    println!("rerun: {} reused", again.reused);
    Ok(())
}
