//! The full staged workflow on the toy corpus, exactly as the `synthvsr`
//! binary runs it: preprocess → train-vocab → train-lam → gen-synth →
//! train-vsr (real only, then real + synthetic) → decode → eval →
//! mismatch → report. Each stage writes into its own hashed run directory.
//!
//! cargo run --example pipeline -- [run_root]

use std::path::{Path, PathBuf};

use synthvsr::config::RunConfig;
use synthvsr::pipeline::{outputs, run, Stage};
use synthvsr::toy::{self, ToySpec};

fn path(dir: &Path, file: &str) -> String {
    dir.join(file).display().to_string()
}

fn stage(base: &RunConfig, s: Stage, kv: &[(&str, String)]) -> synthvsr::Result<PathBuf> {
    let mut cfg = base.clone();
    for (k, v) in kv {
        cfg.set(k, v.clone())?;
    }
    let dir = run(s, &cfg)?;
    println!("{:<12} {}", s.name(), dir.display());
    Ok(dir)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/pipeline"));
    let toy_dir = root.join("toy");
    toy::generate(&toy_dir, &ToySpec::default())?;
    let base = RunConfig::defaults().with("seed", "9")?.with("run.root", root.display().to_string())?;

    let pre = stage(&base, Stage::Preprocess, &[("preprocess.input", path(&toy_dir, "raw.jsonl"))])?;
    let speech = path(&toy_dir, "speech.jsonl");
    let voc = stage(&base, Stage::TrainVocab, &[("vocab.corpus", format!("{},{speech}", path(&pre, outputs::TRAIN)))])?;
    let lam = stage(
        &base,
        Stage::TrainLam,
        &[("lam.data", path(&pre, outputs::TRAIN)), ("lam.steps", "300".into()), ("lam.stop_below", "0.05".into())],
    )?;
    let synth = stage(
        &base,
        Stage::GenSynth,
        &[
            ("synth.generator", path(&lam, outputs::GENERATOR)),
            ("synth.speech", speech),
            ("synth.faces", path(&toy_dir, "faces.jsonl")),
            ("synth.n_per", "2".into()),
        ],
    )?;
    let vsr = base
        .clone()
        .with("vsr.vocab", path(&voc, outputs::VOCAB))?
        .with("vsr.train", path(&pre, outputs::TRAIN))?
        .with("vsr.steps", "300")?
        .with("vsr.warmup", "50")?
        .with("vsr.frame_budget", "60")?
        .with("vsr.max_batch", "16")?
        .with("vsr.eval_every", "50")?
        .with("vsr.stop_wer", "0.05")?;
    let real_only = stage(&vsr, Stage::TrainVsr, &[])?;
    let mixed = stage(&vsr, Stage::TrainVsr, &[("vsr.synth", path(&synth, outputs::SYNTH))])?;

    let eval = base.clone().with("vsr.vocab", path(&voc, outputs::VOCAB))?;
    let test = path(&pre, outputs::TEST);
    let dec = stage(&eval, Stage::Decode, &[("decode.checkpoint", path(&mixed, outputs::RECOGNIZER)), ("decode.manifest", test.clone())])?;
    stage(
        &eval,
        Stage::Eval,
        &[
            ("decode.manifest", test.clone()),
            ("eval.hypotheses", path(&dec, outputs::HYPOTHESES)),
        ],
    )?;
    let mm = stage(
        &eval,
        Stage::Mismatch,
        &[
            ("mismatch.real_model", path(&real_only, outputs::RECOGNIZER)),
            ("mismatch.mix_model", path(&mixed, outputs::RECOGNIZER)),
            ("mismatch.test", test),
            ("synth.generator", path(&lam, outputs::GENERATOR)),
        ],
    )?;
    let report = stage(&base, Stage::Report, &[("report.dir", mm.display().to_string())])?;
    println!("{}", std::fs::read_to_string(mm.join("mismatch.csv"))?);
    println!("plots in {}", report.display());
    Ok(())
}
