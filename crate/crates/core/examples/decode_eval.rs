//! Decodes a held-out set with greedy and beam search, scores both against
//! the references and writes per-utterance WER reports. Decoding and
//! scoring are separate steps: hypotheses round-trip through JSONL.
//!
//! cargo run --example decode_eval -- [out_dir]

use std::path::PathBuf;

use synthvsr::eval::{decode_manifest, load_hypotheses, save_hypotheses, score, VsrTranscriber};
use synthvsr::nn::{DType, ParamStore};
use synthvsr::pipeline::preprocess_manifest;
use synthvsr::tokenizer::train_vocab;
use synthvsr::toy::{self, ToySpec};
use synthvsr::trainer::{load_labeled, train_vsr, VsrRun};
use synthvsr::vsr::{DecodeOptions, VsrConfig, VsrModel, VsrTrainConfig, VsrTrainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/decode"));
    let corpus = toy::generate(&out.join("toy"), &ToySpec::default())?;
    let clips = preprocess_manifest(&corpus.raw, &out.join("clips"))?;
    let (train, test) = (clips.split("train"), clips.split("test"));
    let texts: Vec<String> = train.entries.iter().filter_map(|e| e.transcript.clone()).collect();
    let vocab = train_vocab(&texts, 48)?;

    let model = VsrModel::new(&VsrConfig::desk(vocab.len()), &ParamStore::new(4, DType::F32))?;
    let cfg = VsrTrainConfig { peak_lr: 1e-3, warmup_steps: 50, total_steps: 300, weight_decay: 0.01, clip_norm: Some(5.0) };
    let mut trainer = VsrTrainer::new(model, &cfg)?;
    let mut run = VsrRun::new(4, 300);
    run.frame_budget = 60;
    train_vsr(&mut trainer, &vocab, &[load_labeled(&train, &vocab)?], &run)?;

    for beam in [1, 4] {
        let t = VsrTranscriber {
            model: trainer.model().clone(),
            vocab: vocab.clone(),
            opts: DecodeOptions { beam, max_len: None },
            eval_crop: run.augment.crop,
        };
        let path = out.join(format!("hyp-beam{beam}.jsonl"));
        save_hypotheses(&decode_manifest(&t, &test, None)?, &path)?;
        let report = score(&test, &load_hypotheses(&path)?)?;
        report.save(&out, &format!("wer-beam{beam}"))?;
        let (counts, words) = report.totals();
        println!(
            "beam {beam}: WER {:.3} ({} sub, {} del, {} ins over {words} words)",
            report.wer(),
            counts.substitutions,
            counts.deletions,
            counts.insertions
        );
    }
    Ok(())
}
