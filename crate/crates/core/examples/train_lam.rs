//! Trains the speech-driven lip animation model (generator plus frame and
//! sequence discriminators) on toy clips with the baseline loss weights,
//! then animates a held-out utterance.
//!
//! cargo run --example train_lam -- [out_dir]

use std::path::PathBuf;

use synthvsr::eval::emit_loss_plot;
use synthvsr::lipgen::{train_lam, GeneratorConfig, LamLossWeights, LamRun, LamTrainConfig, LamTrainer};
use synthvsr::media::{write_clip, RotationSequence};
use synthvsr::pipeline::{lam_clips, preprocess_manifest};
use synthvsr::toy::{self, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/lam"));
    let corpus = toy::generate(&out.join("toy"), &ToySpec { train_utterances: 5, test_utterances: 1, ..Default::default() })?;
    let clips = preprocess_manifest(&corpus.raw, &out.join("clips"))?;
    let train = lam_clips(&clips.split("train"), None)?;
    let test = lam_clips(&clips.split("test"), None)?;

    let cfg = LamTrainConfig { seed: 1, window: 8, disc_frames: 2, lr_generator: 1e-4, ..Default::default() };
    let mut trainer = LamTrainer::new(&GeneratorConfig { width: 0.125 }, LamLossWeights::baseline(), cfg, None)?;
    let run = LamRun { steps: 1000, checkpoint_every: 250, out_dir: out.join("run"), stop_below: Some(0.05), smoothing: 10 };
    let logs = train_lam(&mut trainer, &train, &run)?;
    let last = logs.last().expect("at least one step");
    println!("{} steps, reconstruction {:.4}, frame D {:.3}, sequence D {:.3}", logs.len(), last.rec, last.d_img, last.d_seq);
    emit_loss_plot(&out.join("run/loss.csv"), &["rec", "g_img", "g_seq"], &out.join("run/loss.svg"))?;

    let held_out = &test[0];
    let rot = RotationSequence::identity(held_out.speech.count());
    let video = trainer.generator().generate(held_out.video.frame(0), &held_out.speech, &rot, held_out.video.fps())?;
    write_clip(&video, out.join("animated.svsr"))?;
    println!("animated {} ({} frames) -> {}", held_out.id, video.num_frames(), out.join("animated.svsr").display());
    Ok(())
}
