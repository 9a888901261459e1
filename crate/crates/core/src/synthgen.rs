//! Synthetic labeled video from transcribed speech: every speech clip is
//! paired with lip images drawn from a face pool and animated by a trained
//! generator, keeping the original transcript as the label.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lipgen::{load_generator, Generator};
use crate::media::{
    chunk_speech, load_mouth_image, load_wav, read_clip, write_clip, Entry, Manifest, MouthImage, Role, RotationSequence,
    VideoClip, Waveform, DEFAULT_FPS,
};
use crate::nn::Checkpoint;
use crate::rng::derive_rng;

/// Head rotations fed to the generator at synthesis time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RotationPolicy {
    /// A static head: the identity matrix for every frame.
    #[default]
    Identity,
}

impl RotationPolicy {
    pub fn sequence(&self, n: usize) -> RotationSequence {
        match self {
            RotationPolicy::Identity => RotationSequence::identity(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthJob {
    pub generator: PathBuf,
    /// Transcribed speech (role `speech`).
    pub speech: Manifest,
    /// Lip images (role `face`).
    pub faces: Manifest,
    /// Faces paired with every speech clip.
    pub faces_per_clip: usize,
    pub rotation: RotationPolicy,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Speech longer than this is skipped.
    pub max_duration_s: Option<f64>,
    /// The job fails when more than this fraction of clips fail.
    pub max_failure_fraction: f64,
    pub fps: f32,
}

impl SynthJob {
    pub fn new(generator: impl Into<PathBuf>, speech: Manifest, faces: Manifest, out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            generator: generator.into(),
            speech,
            faces,
            faces_per_clip: 1,
            rotation: RotationPolicy::Identity,
            out_dir: out_dir.into(),
            seed,
            max_duration_s: None,
            max_failure_fraction: 0.05,
            fps: DEFAULT_FPS,
        }
    }
}

/// Uniform draw of one pool index.
pub fn sample_face<R: Rng + ?Sized>(pool_len: usize, rng: &mut R) -> Result<usize> {
    if pool_len == 0 {
        return Err(Error::Invalid("face pool is empty".into()));
    }
    Ok(rng.random_range(0..pool_len))
}

/// Face index for replica `replica` of speech clip `speech_index`: position
/// `replica` of a permutation of the pool seeded by `(seed, speech_index)`,
/// so replicas of one clip get distinct faces while the pool allows it.
pub fn assign_face(seed: u64, speech_index: usize, replica: usize, pool_len: usize) -> Result<usize> {
    if pool_len == 0 {
        return Err(Error::Invalid("face pool is empty".into()));
    }
    let mut rng = derive_rng(seed, &[0xface, speech_index as u64]);
    let mut perm: Vec<usize> = (0..pool_len).collect();
    perm.shuffle(&mut rng);
    Ok(perm[replica % pool_len])
}

/// Animates `face` with `speech`: one frame per 40 ms chunk.
pub fn synthesize_clip(generator: &Generator, speech: &Waveform, face: &MouthImage, rotation: RotationPolicy, fps: f32) -> Result<VideoClip> {
    let chunks = chunk_speech(speech, fps)?;
    let rotations = rotation.sequence(chunks.count());
    generator.generate(face.pixels(), &chunks, &rotations, fps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    inputs: String,
    clip_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthFailure {
    pub speech_id: String,
    pub replica: usize,
    pub error: String,
}

#[derive(Debug)]
pub struct SynthReport {
    pub manifest: Manifest,
    pub generated: usize,
    pub reused: usize,
    pub filtered: Vec<String>,
    pub failures: Vec<SynthFailure>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Task<'a> {
    speech_index: usize,
    entry: &'a Entry,
    replica: usize,
}

enum Outcome {
    Generated(Entry),
    Reused(Entry),
    Failed(SynthFailure),
}

/// Materializes `D_synth` under `job.out_dir` (`clips/`, `synth.jsonl`,
/// `errors.jsonl`). Clips whose sidecar records the same inputs and whose
/// bytes still match the recorded hash are reused.
pub fn build_synth_dataset(job: &SynthJob) -> Result<SynthReport> {
    if job.faces_per_clip == 0 {
        return Err(Error::Config("faces per clip must be at least 1".into()));
    }
    let faces: Vec<&Entry> = job.faces.with_role(Role::Face).collect();
    if faces.is_empty() {
        return Err(Error::Invalid("face pool is empty".into()));
    }
    let generator = load_generator(&job.generator)?;
    let generator_hash = Checkpoint::file_hash(&job.generator)?;
    let clip_dir = job.out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;

    let mut filtered = Vec::new();
    let mut tasks = Vec::new();
    for (i, entry) in job.speech.with_role(Role::Speech).enumerate() {
        if let Some(limit) = job.max_duration_s {
            let wave = load_wav(job.speech.require(entry, "audio")?)?;
            if wave.duration_s() > limit {
                filtered.push(entry.id.clone());
                continue;
            }
        }
        for replica in 0..job.faces_per_clip {
            tasks.push(Task {
                speech_index: i,
                entry,
                replica,
            });
        }
    }

    let outcomes: Vec<Outcome> = tasks
        .par_iter()
        .map(|task| {
            run_task(job, &generator, &generator_hash, &faces, &clip_dir, task).unwrap_or_else(|e| {
                Outcome::Failed(SynthFailure {
                    speech_id: task.entry.id.clone(),
                    replica: task.replica,
                    error: e.to_string(),
                })
            })
        })
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let (mut generated, mut reused) = (0, 0);
    for o in outcomes {
        match o {
            Outcome::Generated(e) => {
                generated += 1;
                entries.push(e);
            }
            Outcome::Reused(e) => {
                reused += 1;
                entries.push(e);
            }
            Outcome::Failed(f) => {
                log::warn!("synthesis of {} replica {} failed: {}", f.speech_id, f.replica, f.error);
                failures.push(f);
            }
        }
    }
    let err_path = job.out_dir.join("errors.jsonl");
    let mut err_file = std::fs::File::create(&err_path).map_err(|e| Error::io(&err_path, e))?;
    for f in &failures {
        writeln!(err_file, "{}", serde_json::to_string(f)?).map_err(|e| Error::io(&err_path, e))?;
    }
    let total = tasks.len();
    if total > 0 && failures.len() as f64 / total as f64 > job.max_failure_fraction {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total,
            limit: job.max_failure_fraction,
        });
    }
    let manifest = Manifest::new(entries, &job.out_dir);
    manifest.save(job.out_dir.join("synth.jsonl"))?;
    log::info!(
        "synthetic set: {} entries ({generated} generated, {reused} reused, {} failed, {} filtered)",
        manifest.len(),
        failures.len(),
        filtered.len()
    );
    Ok(SynthReport {
        manifest,
        generated,
        reused,
        filtered,
        failures,
    })
}

fn run_task(job: &SynthJob, generator: &Generator, generator_hash: &str, faces: &[&Entry], clip_dir: &Path, task: &Task) -> Result<Outcome> {
    let speech = task.entry;
    let face_idx = assign_face(job.seed, task.speech_index, task.replica, faces.len())?;
    let face = faces[face_idx];
    let audio_path = job.speech.require(speech, "audio")?;
    let face_path = job.faces.require(face, "image")?;
    let file_name = format!("{}-r{}.svsr", sanitize(&speech.id), task.replica);
    let clip_path = clip_dir.join(&file_name);
    let sidecar_path = clip_dir.join(format!("{file_name}.json"));
    let audio_bytes = std::fs::read(&audio_path).map_err(|e| Error::io(&audio_path, e))?;
    let face_bytes = std::fs::read(&face_path).map_err(|e| Error::io(&face_path, e))?;
    let inputs = sha256_hex(
        format!(
            "{generator_hash}|{}|{}|{:?}|{}",
            sha256_hex(&audio_bytes),
            sha256_hex(&face_bytes),
            job.rotation,
            job.fps
        )
        .as_bytes(),
    );

    let mut entry = Entry::new(format!("{}-synth{}", speech.id, task.replica), Role::Synth);
    entry.split = speech.split.clone();
    entry.transcript = speech.transcript.clone();
    entry.video_path = Some(format!("clips/{file_name}"));
    entry.speech_id = Some(speech.id.clone());
    entry.face_id = Some(face.id.clone());
    entry.replica = Some(task.replica);
    entry.generator_hash = Some(generator_hash.to_string());

    if let Ok(text) = std::fs::read_to_string(&sidecar_path) {
        if let Ok(side) = serde_json::from_str::<Sidecar>(&text) {
            if side.inputs == inputs {
                if let Ok(bytes) = std::fs::read(&clip_path) {
                    if sha256_hex(&bytes) == side.clip_sha256 {
                        entry.num_frames = Some(read_clip(&clip_path)?.num_frames());
                        return Ok(Outcome::Reused(entry));
                    }
                }
            }
        }
    }

    let wave = load_wav(&audio_path)?;
    let face_img = load_mouth_image(&face_path)?;
    let clip = synthesize_clip(generator, &wave, &face_img, job.rotation, job.fps)?;
    write_clip(&clip, &clip_path)?;
    let bytes = std::fs::read(&clip_path).map_err(|e| Error::io(&clip_path, e))?;
    let side = Sidecar {
        inputs,
        clip_sha256: sha256_hex(&bytes),
    };
    std::fs::write(&sidecar_path, serde_json::to_vec(&side)?).map_err(|e| Error::io(&sidecar_path, e))?;
    entry.num_frames = Some(clip.num_frames());
    Ok(Outcome::Generated(entry))
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_face_pool() {
        let mut rng = derive_rng(7, &[]);
        for _ in 0..10 {
            assert_eq!(sample_face(1, &mut rng).unwrap(), 0);
        }
        assert!(sample_face(0, &mut rng).is_err());
    }

    #[test]
    fn replicas_get_distinct_faces() {
        for i in 0..50 {
            let a = assign_face(3, i, 0, 5).unwrap();
            let b = assign_face(3, i, 1, 5).unwrap();
            assert_ne!(a, b);
            assert_eq!(a, assign_face(3, i, 0, 5).unwrap());
        }
        assert_eq!(assign_face(3, 0, 0, 1).unwrap(), assign_face(3, 0, 1, 1).unwrap());
    }

    #[test]
    fn uniform_face_frequencies() {
        let mut rng = derive_rng(11, &[]);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_face(4, &mut rng).unwrap()] += 1;
        }
        // binomial n = 10000, p = 1/4: σ = sqrt(n p (1 − p))
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
