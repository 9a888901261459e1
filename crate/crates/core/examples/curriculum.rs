//! A two-stage curriculum: a small recognizer is trained first and its
//! visual front-end is transplanted into the next stage before training.
//!
//! cargo run --example curriculum -- [run_root]

use std::collections::BTreeMap;
use std::path::PathBuf;

use synthvsr::config::RunConfig;
use synthvsr::pipeline::{outputs, run, Stage};
use synthvsr::toy::{self, ToySpec};
use synthvsr::trainer::Recipe;

const RECIPE: &str = r#"
[[stage]]
name = "warmup"
config = { "vsr.steps" = 100, "vsr.warmup" = 20 }

[[stage]]
name = "main"
init_frontend_from = "warmup"
config = { "vsr.steps" = 200, "vsr.peak_lr" = 5e-4, "vsr.stop_wer" = 0.05 }
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/curriculum"));
    let toy_dir = root.join("toy");
    toy::generate(&toy_dir, &ToySpec { test_utterances: 0, ..Default::default() })?;
    let base = RunConfig::defaults().with("seed", "11")?.with("run.root", root.display().to_string())?;
    let pre = run(Stage::Preprocess, &base.clone().with("preprocess.input", toy_dir.join("raw.jsonl").display().to_string())?)?;
    let train = pre.join(outputs::TRAIN).display().to_string();
    let voc = run(Stage::TrainVocab, &base.clone().with("vocab.corpus", train.clone())?)?;
    let vsr = base
        .with("vsr.vocab", voc.join(outputs::VOCAB).display().to_string())?
        .with("vsr.train", train)?
        .with("vsr.frame_budget", "60")?
        .with("vsr.eval_every", "50")?;

    let recipe = Recipe::parse(RECIPE)?;
    let mut finished: BTreeMap<String, PathBuf> = BTreeMap::new();
    for s in &recipe.stages {
        let mut cfg = vsr.clone();
        for (k, v) in s.overrides() {
            cfg.set(&k, v)?;
        }
        if let Some(from) = &s.init_frontend_from {
            cfg.set("vsr.init_frontend", finished[from].join(outputs::RECOGNIZER).display().to_string())?;
        }
        let dir = run(Stage::TrainVsr, &cfg)?;
        println!("stage {:<7} -> {}", s.name, dir.display());
        finished.insert(s.name.clone(), dir);
    }
    Ok(())
}
