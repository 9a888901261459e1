//! The 2×2 real/synthetic domain-mismatch assessment.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, Transcriber, WerReport};
use crate::lipgen::Generator;
use crate::media::{chunk_speech, load_wav, read_clip, write_clip, Entry, Manifest, Role, RotationSequence};
use crate::{Error, Result};

const MANIFEST_NAME: &str = "synth_test.jsonl";
const META_NAME: &str = "synth_test.meta.json";

/// A synthetic copy of a real test set plus the utterances that could not
/// be generated.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTestSet {
    pub manifest: Manifest,
    pub failed: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct Meta {
    generator_hash: String,
    source_ids: Vec<String>,
    failed: Vec<(String, String)>,
}

/// Regenerates every real test utterance from its own speech and its first
/// video frame, and persists the result under `out_dir`. A previously
/// persisted set built from the same generator and utterances is reused.
pub fn build_synthetic_test(real_test: &Manifest, generator: &Generator, generator_hash: &str, out_dir: &Path) -> Result<SyntheticTestSet> {
    let source: Vec<&Entry> = real_test.entries.iter().filter(|e| e.video_path.is_some()).collect();
    let source_ids: Vec<String> = source.iter().map(|e| e.id.clone()).collect();
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let meta_path = out_dir.join(META_NAME);
    if let (Ok(text), true) = (std::fs::read_to_string(&meta_path), manifest_path.exists()) {
        if let Ok(meta) = serde_json::from_str::<Meta>(&text) {
            if meta.generator_hash == generator_hash && meta.source_ids == source_ids {
                log::info!("reusing synthetic test set at {}", manifest_path.display());
                return Ok(SyntheticTestSet {
                    manifest: Manifest::load(&manifest_path)?,
                    failed: meta.failed,
                });
            }
        }
    }

    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for (i, e) in source.iter().enumerate() {
        match synthesize_one(real_test, e, generator) {
            Ok(clip) => {
                let rel = format!("clips/{i:05}.svsr");
                write_clip(&clip, out_dir.join(&rel))?;
                let mut s = Entry::new(e.id.clone(), Role::Synth);
                s.split = e.split.clone();
                s.transcript = e.transcript.clone();
                s.video_path = Some(rel);
                s.num_frames = Some(clip.num_frames());
                s.speech_id = Some(e.id.clone());
                s.face_id = Some(e.id.clone());
                s.generator_hash = Some(generator_hash.to_string());
                entries.push(s);
            }
            Err(err) => {
                log::warn!("synthetic test clip for {} failed: {err}", e.id);
                failed.push((e.id.clone(), err.to_string()));
            }
        }
    }
    let manifest = Manifest::new(entries, out_dir);
    manifest.save(&manifest_path)?;
    let meta = Meta {
        generator_hash: generator_hash.to_string(),
        source_ids,
        failed: failed.clone(),
    };
    std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok(SyntheticTestSet { manifest, failed })
}

fn synthesize_one(real_test: &Manifest, e: &Entry, generator: &Generator) -> Result<crate::media::VideoClip> {
    let clip = read_clip(real_test.require(e, "video")?)?;
    let wave = load_wav(real_test.require(e, "audio")?)?;
    let chunks = chunk_speech(&wave, clip.fps())?;
    generator.generate(clip.frame(0), &chunks, &RotationSequence::identity(chunks.count()), clip.fps())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchCell {
    pub model: String,
    pub test: String,
    pub report: WerReport,
}

/// WER of {real-only, real+synth} models on {real, synthetic} test sets,
/// all over the same paired utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub cells: Vec<MismatchCell>,
    /// Utterances dropped from every cell because synthesis failed.
    pub excluded: Vec<String>,
}

impl MismatchReport {
    pub const MODELS: [&'static str; 2] = ["real-only", "real+synth"];
    pub const TESTS: [&'static str; 2] = ["real", "synthetic"];

    pub fn cell(&self, model: &str, test: &str) -> Option<&MismatchCell> {
        self.cells.iter().find(|c| c.model == model && c.test == test)
    }

    pub fn wer(&self, model: &str, test: &str) -> Option<f64> {
        self.cell(model, test).map(|c| c.report.wer())
    }

    /// Every model/test combination is present and has scored utterances.
    pub fn is_complete(&self) -> bool {
        Self::MODELS.iter().all(|m| {
            Self::TESTS
                .iter()
                .all(|t| self.cell(m, t).is_some_and(|c| !c.report.rows.is_empty() && c.report.wer().is_finite()))
        })
    }

    pub fn bars(&self) -> Vec<super::Bar> {
        self.cells
            .iter()
            .map(|c| super::Bar {
                group: c.test.clone(),
                series: c.model.clone(),
                value: c.report.wer(),
            })
            .collect()
    }
}

/// Fills the 2×2 grid. Utterances missing from the synthetic set are removed
/// from the real cells as well so both test variants stay paired.
pub fn mismatch_assessment(
    model_real: &dyn Transcriber,
    model_mix: &dyn Transcriber,
    real_test: &Manifest,
    synth_test: &SyntheticTestSet,
) -> Result<MismatchReport> {
    let synth_ids: HashSet<String> = synth_test.manifest.entries.iter().map(|e| e.id.clone()).collect();
    let real_ids: BTreeSet<String> = real_test
        .entries
        .iter()
        .filter(|e| e.video_path.is_some())
        .map(|e| e.id.clone())
        .collect();
    let paired: HashSet<String> = real_ids.iter().filter(|id| synth_ids.contains(*id)).cloned().collect();
    if paired.is_empty() {
        return Err(Error::Invalid("no utterance has both a real and a synthetic test clip".into()));
    }
    let excluded: Vec<String> = real_ids.into_iter().filter(|id| !paired.contains(id)).collect();
    let mut cells = Vec::new();
    for (name, model) in MismatchReport::MODELS.iter().zip([model_real, model_mix]) {
        for (test, manifest) in MismatchReport::TESTS.iter().zip([real_test, &synth_test.manifest]) {
            cells.push(MismatchCell {
                model: name.to_string(),
                test: test.to_string(),
                report: evaluate(model, manifest, Some(&paired))?,
            });
        }
    }
    Ok(MismatchReport { cells, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{VideoClip, FRAME_PIXELS};

    struct Fixed(&'static str);

    impl Transcriber for Fixed {
        fn transcribe(&self, _: &VideoClip) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    fn set(dir: &Path, role: Role, ids: &[&str]) -> Manifest {
        std::fs::create_dir_all(dir).unwrap();
        let entries = ids
            .iter()
            .map(|id| {
                let clip = VideoClip::new(vec![0; FRAME_PIXELS], 25.0).unwrap();
                write_clip(&clip, dir.join(format!("{id}.svsr"))).unwrap();
                let mut e = Entry::new(*id, role);
                e.video_path = Some(format!("{id}.svsr"));
                e.transcript = Some(format!("word {id}"));
                e
            })
            .collect();
        Manifest::new(entries, dir)
    }

    #[test]
    fn identical_models_give_identical_rows() {
        let dir = tempfile::tempdir().unwrap();
        let real = set(&dir.path().join("r"), Role::Real, &["a", "b"]);
        let synth = SyntheticTestSet {
            manifest: set(&dir.path().join("s"), Role::Synth, &["a", "b"]),
            failed: vec![],
        };
        let m = Fixed("word a");
        let r = mismatch_assessment(&m, &m, &real, &synth).unwrap();
        assert!(r.is_complete());
        for t in MismatchReport::TESTS {
            assert_eq!(r.cell("real-only", t).unwrap().report, r.cell("real+synth", t).unwrap().report);
        }
        assert_eq!(r.wer("real-only", "real"), Some(0.25));
    }

    #[test]
    fn failed_synthesis_is_excluded_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let real = set(&dir.path().join("r"), Role::Real, &["a", "b", "c"]);
        let synth = SyntheticTestSet {
            manifest: set(&dir.path().join("s"), Role::Synth, &["a", "c"]),
            failed: vec![("b".into(), "boom".into())],
        };
        let r = mismatch_assessment(&Fixed("x"), &Fixed("word b"), &real, &synth).unwrap();
        assert_eq!(r.excluded, vec!["b".to_string()]);
        for c in &r.cells {
            let ids: Vec<&str> = c.report.rows.iter().map(|r| r.id.as_str()).collect();
            assert_eq!(ids, vec!["a", "c"], "{} / {}", c.model, c.test);
        }
    }
}
