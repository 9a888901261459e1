//! The staged pipeline behind the `synthvsr` binary. Every stage reads its
//! inputs from configuration keys and writes into its own run directory
//! `{root}/{stage}-{config hash}`.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::eval::{
    build_synthetic_test, emit_loss_plot, emit_plots, evaluate, load_hypotheses, mismatch_assessment, save_hypotheses, score,
    decode_manifest, parse_bars_csv, MismatchReport, VsrTranscriber, WerReport,
};
use crate::lipgen::{generator_from_checkpoint, train_lam, GeneratorConfig, LamClip, LamLossWeights, LamRun, LamTrainConfig, LamTrainer};
use crate::media::{chunk_speech, crop_mouth, load_wav, read_raw_video, write_clip, Image, Manifest, VideoClip};
use crate::nn::{Checkpoint, DType, ParamStore};
use crate::synthgen::{build_synth_dataset, SynthJob};
use crate::tokenizer::{train_vocab, Vocab};
use crate::trainer::{init_frontend, load_labeled, train_vsr, AugmentPolicy, VsrRun};
use crate::vsr::{load_vsr, model_checkpoint, vsr_from_checkpoint, DecodeOptions, VsrConfig, VsrModel, VsrTrainConfig, VsrTrainer};
use crate::{Error, Result};

/// Environment variable that overrides `run.root`.
pub const RUN_ROOT_ENV: &str = "SYNTHVSR_RUN_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    TrainVocab,
    TrainLam,
    GenSynth,
    TrainVsr,
    Decode,
    Eval,
    Mismatch,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Preprocess,
        Stage::TrainVocab,
        Stage::TrainLam,
        Stage::GenSynth,
        Stage::TrainVsr,
        Stage::Decode,
        Stage::Eval,
        Stage::Mismatch,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::TrainVocab => "train-vocab",
            Stage::TrainLam => "train-lam",
            Stage::GenSynth => "gen-synth",
            Stage::TrainVsr => "train-vsr",
            Stage::Decode => "decode",
            Stage::Eval => "eval",
            Stage::Mismatch => "mismatch",
            Stage::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown stage `{name}`")))
    }
}

/// Run directory of `stage` under `cfg` (not created).
pub fn run_dir(stage: Stage, cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.path("run.root"))
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-{}", stage.name(), cfg.short_hash()))
}

/// File names of the main output of each stage.
pub mod outputs {
    pub const REAL: &str = "real.jsonl";
    pub const TRAIN: &str = "train.jsonl";
    pub const TEST: &str = "test.jsonl";
    pub const VOCAB: &str = "vocab.json";
    pub const GENERATOR: &str = "generator.safetensors";
    pub const SYNTH: &str = "synth.jsonl";
    pub const RECOGNIZER: &str = "recognizer.safetensors";
    pub const HYPOTHESES: &str = "hypotheses.jsonl";
    pub const WER: &str = "wer";
    pub const MISMATCH: &str = "mismatch";
}

/// Path from `key`, which must name an existing file made by `producer`.
fn artifact(cfg: &RunConfig, key: &str, producer: Stage) -> Result<PathBuf> {
    let what = |detail: String| Error::MissingArtifact {
        what: detail,
        producer: producer.name(),
    };
    let p = cfg.path(key).ok_or_else(|| what(format!("(`{key}` is not set)")))?;
    if !p.exists() {
        return Err(what(format!("{} (`{key}`)", p.display())));
    }
    Ok(p)
}

fn manifest_at(cfg: &RunConfig, key: &str, producer: Stage) -> Result<Manifest> {
    Manifest::load(artifact(cfg, key, producer)?)
}

/// Runs one stage and returns its run directory.
pub fn run(stage: Stage, cfg: &RunConfig) -> Result<PathBuf> {
    let seed = cfg.seed()?;
    let dir = run_dir(stage, cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, format!("# config hash {}\n{}", cfg.hash(), cfg.to_toml())).map_err(|e| Error::io(&cfg_path, e))?;
    log::info!("{} -> {}", stage.name(), dir.display());
    match stage {
        Stage::Preprocess => preprocess(cfg, &dir)?,
        Stage::TrainVocab => vocab_stage(cfg, &dir)?,
        Stage::TrainLam => lam_stage(cfg, seed, &dir)?,
        Stage::GenSynth => synth_stage(cfg, seed, &dir)?,
        Stage::TrainVsr => vsr_stage(cfg, seed, &dir)?,
        Stage::Decode => decode_stage(cfg, &dir)?,
        Stage::Eval => eval_stage(cfg, &dir)?,
        Stage::Mismatch => mismatch_stage(cfg, &dir)?,
        Stage::Report => report_stage(cfg, &dir)?,
    }
    Ok(dir)
}

/// Crops every raw video of a manifest to mouth clips with its bounding box.
pub fn preprocess_manifest(raw: &Manifest, out_dir: &Path) -> Result<Manifest> {
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut entries = Vec::new();
    for e in &raw.entries {
        let Some(_) = &e.video_path else { continue };
        let bbox = e
            .bbox
            .ok_or_else(|| Error::Manifest(format!("raw entry `{}` has no mouth box", e.id)))?;
        let video = read_raw_video(raw.require(e, "video")?)?;
        let mut frames = Vec::with_capacity(video.frames.len());
        for f in &video.frames {
            let img = Image::new(video.width, video.height, video.channels, f.clone())?;
            frames.push(crop_mouth(&img, &bbox)?.into_pixels());
        }
        let clip = VideoClip::from_frames(&frames, video.fps)?;
        let rel = format!("clips/{}.svsr", e.id);
        write_clip(&clip, out_dir.join(&rel))?;
        let mut out = e.clone();
        out.video_path = Some(rel);
        out.bbox = None;
        out.num_frames = Some(clip.num_frames());
        if let Some(a) = &e.audio_path {
            out.audio_path = Some(raw.resolve(a).to_string_lossy().into_owned());
        }
        entries.push(out);
    }
    Ok(Manifest::new(entries, out_dir))
}

fn preprocess(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let raw = Manifest::load(cfg.path("preprocess.input").ok_or_else(|| {
        Error::Config("`preprocess.input` must name a manifest of raw videos".into())
    })?)?;
    let all = preprocess_manifest(&raw, dir)?;
    all.save(dir.join(outputs::REAL))?;
    all.split("train").save(dir.join(outputs::TRAIN))?;
    all.split("test").save(dir.join(outputs::TEST))?;
    log::info!("preprocessed {} clips", all.len());
    Ok(())
}

fn vocab_stage(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let list = cfg.require("vocab.corpus")?;
    let mut corpus = Vec::new();
    for p in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let path = PathBuf::from(p);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                what: format!("transcript manifest {p} (`vocab.corpus`)"),
                producer: Stage::Preprocess.name(),
            });
        }
        corpus.extend(Manifest::load(&path)?.entries.into_iter().filter_map(|e| e.transcript));
    }
    let vocab = train_vocab(&corpus, cfg.value("vocab.size")?)?;
    vocab.save(dir.join(outputs::VOCAB))?;
    log::info!("vocabulary of {} pieces from {} transcripts", vocab.len(), corpus.len());
    Ok(())
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocab> {
    Vocab::load(artifact(cfg, "vsr.vocab", Stage::TrainVocab)?)
}

/// Audio-visual clips (video, audio and optionally transcript) for
/// lip-animation training.
pub fn lam_clips(manifest: &Manifest, vocab: Option<&Vocab>) -> Result<Vec<LamClip>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        if e.video_path.is_none() || e.audio_path.is_none() {
            continue;
        }
        let video = crate::media::read_clip(manifest.require(e, "video")?)?;
        let speech = chunk_speech(&load_wav(manifest.require(e, "audio")?)?, video.fps())?;
        let transcript = match (vocab, &e.transcript) {
            (Some(v), Some(t)) => Some(v.encode(t)),
            _ => None,
        };
        out.push(LamClip::new(&e.id, video, speech, transcript)?);
    }
    if out.is_empty() {
        return Err(Error::Manifest("no entry has both video and audio".into()));
    }
    Ok(out)
}

fn lam_stage(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<()> {
    let data = manifest_at(cfg, "lam.data", Stage::Preprocess)?;
    let weights = LamLossWeights::preset(cfg.require("lam.loss")?)?;
    let (vsr, vocab) = if weights.needs_recognizer() {
        let path = artifact(cfg, "lam.recognizer", Stage::TrainVsr)?;
        (Some(load_vsr(path, true)?), Some(load_vocab(cfg)?))
    } else {
        (None, None)
    };
    let clips = lam_clips(&data, vocab.as_ref())?;
    let gen_cfg = GeneratorConfig {
        width: cfg.value("lam.width")?,
    };
    let train_cfg = LamTrainConfig {
        seed,
        window: cfg.value("lam.window")?,
        disc_frames: cfg.value("lam.disc_frames")?,
        lr_generator: cfg.value("lam.lr_g")?,
        lr_frame_disc: cfg.value("lam.lr_d_img")?,
        lr_seq_disc: cfg.value("lam.lr_d_seq")?,
    };
    let mut trainer = LamTrainer::new(&gen_cfg, weights, train_cfg, vsr)?;
    let run = LamRun {
        steps: cfg.value("lam.steps")?,
        checkpoint_every: cfg.value("lam.checkpoint_every")?,
        out_dir: dir.to_path_buf(),
        stop_below: cfg.opt("lam.stop_below")?,
        smoothing: 10,
    };
    // a rerun starts from scratch: the log belongs to this run only
    let _ = std::fs::remove_file(dir.join("loss.csv"));
    let logs = train_lam(&mut trainer, &clips, &run)?;
    trainer.checkpoint()?.save(dir.join(outputs::GENERATOR))?;
    if let Some(l) = logs.last() {
        log::info!("lip animation: {} steps, final reconstruction {:.4}", trainer.steps(), l.rec);
    }
    emit_loss_plot(&dir.join("loss.csv"), &["rec", "total"], &dir.join("loss.svg"))?;
    Ok(())
}

fn synth_stage(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<()> {
    let generator = artifact(cfg, "synth.generator", Stage::TrainLam)?;
    let speech = Manifest::load(cfg.path("synth.speech").ok_or_else(|| Error::Config("`synth.speech` must be set".into()))?)?;
    let faces = Manifest::load(cfg.path("synth.faces").ok_or_else(|| Error::Config("`synth.faces` must be set".into()))?)?;
    let mut job = SynthJob::new(generator, speech, faces, dir, seed);
    job.faces_per_clip = cfg.value("synth.n_per")?;
    job.max_duration_s = cfg.opt("synth.max_duration_s")?;
    job.max_failure_fraction = cfg.value("synth.max_failure_fraction")?;
    job.fps = cfg.value("data.fps")?;
    let report = build_synth_dataset(&job)?;
    log::info!("synthetic set of {} clips", report.manifest.len());
    Ok(())
}

fn parse_weights(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|w| w.trim().parse().map_err(|_| Error::Config(format!("bad mixing weight `{w}`"))))
        .collect()
}

/// Builds the trainer and run options of `train-vsr` from configuration.
pub fn vsr_run_from_config(cfg: &RunConfig, seed: u64, vocab_size: usize) -> Result<(VsrConfig, VsrTrainConfig, VsrRun)> {
    let model_cfg = VsrConfig::preset(cfg.require("vsr.preset")?, vocab_size)?;
    let steps: u64 = cfg.value("vsr.steps")?;
    let train = VsrTrainConfig {
        peak_lr: cfg.value("vsr.peak_lr")?,
        warmup_steps: cfg.value("vsr.warmup")?,
        total_steps: steps as usize,
        weight_decay: cfg.value("vsr.weight_decay")?,
        clip_norm: cfg.opt("vsr.clip_norm")?,
    };
    let mut run = VsrRun::new(seed, steps);
    run.augment = AugmentPolicy {
        hflip_prob: cfg.value("aug.hflip")?,
        crop: cfg.opt("aug.crop")?,
        max_masks: cfg.value("aug.max_masks")?,
        max_mask_fraction: cfg.value("aug.max_mask_fraction")?,
    };
    run.weights = cfg.get("vsr.mix_weights").map(parse_weights).transpose()?;
    run.frame_budget = cfg.value("vsr.frame_budget")?;
    run.max_batch = cfg.value("vsr.max_batch")?;
    run.steps_per_epoch = cfg.value("vsr.steps_per_epoch")?;
    run.average_last = cfg.value("vsr.average_last")?;
    run.eval_every = cfg.value("vsr.eval_every")?;
    run.stop_wer = cfg.opt("vsr.stop_wer")?;
    run.decode = decode_options(cfg)?;
    Ok((model_cfg, train, run))
}

fn decode_options(cfg: &RunConfig) -> Result<DecodeOptions> {
    Ok(DecodeOptions {
        beam: cfg.value("decode.beam")?,
        max_len: cfg.opt("decode.max_len")?,
    })
}

fn vsr_stage(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let mut datasets = vec![load_labeled(&manifest_at(cfg, "vsr.train", Stage::Preprocess)?, &vocab)?];
    if cfg.get("vsr.synth").is_some() {
        datasets.push(load_labeled(&manifest_at(cfg, "vsr.synth", Stage::GenSynth)?, &vocab)?);
    }
    let (model_cfg, train_cfg, run) = vsr_run_from_config(cfg, seed, vocab.len())?;
    let store = ParamStore::new(seed, DType::F32);
    let model = VsrModel::new(&model_cfg, &store)?;
    if cfg.get("vsr.init_frontend").is_some() {
        let ck = Checkpoint::load(artifact(cfg, "vsr.init_frontend", Stage::TrainVsr)?)?;
        let n = init_frontend(&model, &ck)?.len();
        log::info!("front-end initialized from checkpoint ({n} tensors)");
    }
    let mut trainer = VsrTrainer::new(model, &train_cfg)?;
    let last = dir.join("last.safetensors");
    if last.exists() {
        trainer.resume(&Checkpoint::load(&last)?)?;
        log::info!("resuming at step {}", trainer.steps());
    }
    let run = VsrRun {
        out_dir: Some(dir.to_path_buf()),
        ..run
    };
    let summary = train_vsr(&mut trainer, &vocab, &datasets, &run)?;
    let final_ck = match &summary.averaged {
        Some(p) => Checkpoint::load(p)?,
        None => model_checkpoint(trainer.model())?,
    };
    final_ck.save(dir.join(outputs::RECOGNIZER))?;
    emit_loss_plot(&dir.join("loss.csv"), &["loss", "ctc", "ce"], &dir.join("loss.svg"))?;
    Ok(())
}

fn transcriber(cfg: &RunConfig, key: &str) -> Result<VsrTranscriber> {
    let ck = Checkpoint::load(artifact(cfg, key, Stage::TrainVsr)?)?;
    Ok(VsrTranscriber {
        model: vsr_from_checkpoint(&ck, true)?,
        vocab: load_vocab(cfg)?,
        opts: decode_options(cfg)?,
        eval_crop: cfg.opt("aug.crop")?,
    })
}

fn decode_stage(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let t = transcriber(cfg, "decode.checkpoint")?;
    let m = manifest_at(cfg, "decode.manifest", Stage::Preprocess)?;
    save_hypotheses(&decode_manifest(&t, &m, None)?, &dir.join(outputs::HYPOTHESES))
}

fn eval_stage(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let m = manifest_at(cfg, "decode.manifest", Stage::Preprocess)?;
    let report = if cfg.get("eval.hypotheses").is_some() {
        score(&m, &load_hypotheses(&artifact(cfg, "eval.hypotheses", Stage::Decode)?)?)?
    } else {
        evaluate(&transcriber(cfg, "decode.checkpoint")?, &m, None)?
    };
    log::info!("WER {:.4} over {} utterances", report.wer(), report.rows.len());
    report.save(dir, outputs::WER)
}

fn mismatch_stage(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let real = transcriber(cfg, "mismatch.real_model")?;
    let mix = transcriber(cfg, "mismatch.mix_model")?;
    let test = manifest_at(cfg, "mismatch.test", Stage::Preprocess)?;
    let gen_path = artifact(cfg, "synth.generator", Stage::TrainLam)?;
    let generator = generator_from_checkpoint(&Checkpoint::load(&gen_path)?)?;
    let synth = build_synthetic_test(&test, &generator, &Checkpoint::file_hash(&gen_path)?, &dir.join("synth_test"))?;
    let report = mismatch_assessment(&real, &mix, &test, &synth)?;
    save_mismatch(&report, dir)?;
    for c in &report.cells {
        log::info!("{:>10} model on {:>9} test: WER {:.4}", c.model, c.test, c.report.wer());
    }
    Ok(())
}

/// Writes `mismatch.json`, `mismatch.csv`, `mismatch.svg` and the per-cell
/// WER reports.
pub fn save_mismatch(report: &MismatchReport, dir: &Path) -> Result<()> {
    let p = dir.join(format!("{}.json", outputs::MISMATCH));
    std::fs::write(&p, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&p, e))?;
    for c in &report.cells {
        c.report.save(&dir.join("cells"), &format!("{}_{}", c.model.replace('+', "_"), c.test))?;
    }
    emit_plots(&report.bars(), dir, outputs::MISMATCH)?;
    Ok(())
}

fn report_stage(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let src = cfg
        .path("report.dir")
        .ok_or_else(|| Error::Config("`report.dir` must name a run directory".into()))?;
    let mut made = 0;
    let loss = src.join("loss.csv");
    if loss.exists() {
        let header = std::fs::read_to_string(&loss).map_err(|e| Error::io(&loss, e))?;
        let cols: Vec<&str> = header.lines().next().unwrap_or_default().split(',').skip(1).filter(|c| *c != "lr").collect();
        made += usize::from(emit_loss_plot(&loss, &cols, &dir.join("loss.svg"))?);
    }
    let bars = src.join(format!("{}.csv", outputs::MISMATCH));
    if bars.exists() {
        let text = std::fs::read_to_string(&bars).map_err(|e| Error::io(&bars, e))?;
        made += emit_plots(&parse_bars_csv(&text)?, dir, outputs::MISMATCH)?.len();
    }
    let wer = src.join(format!("{}.json", outputs::WER));
    if wer.exists() {
        let r = WerReport::load(&wer)?;
        let p = dir.join("summary.txt");
        std::fs::write(&p, format!("WER {:.4} over {} utterances\n", r.wer(), r.rows.len())).map_err(|e| Error::io(&p, e))?;
        made += 1;
    }
    if made == 0 {
        return Err(Error::MissingArtifact {
            what: format!("loss.csv, mismatch.csv or wer.json in {}", src.display()),
            producer: Stage::TrainVsr.name(),
        });
    }
    Ok(())
}
