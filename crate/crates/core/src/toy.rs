//! A small synthetic audio-visual world for smoke tests and examples.
//!
//! Twenty words, each spoken as three mouth shapes. A mouth shape is an
//! (openness, width) pair; the face renders it as a lip ellipse and the
//! voice as two tones whose pitches follow the shape. Identities differ in
//! skin and lip tone and in mouth position.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::media::{save_mouth_image, save_wav, write_raw_video, BBox, Entry, Manifest, MouthImage, RawVideo, Role, Waveform, FRAME_SIZE};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const WORDS: [&str; 20] = [
    "bin", "lay", "place", "set", "red", "blue", "green", "white", "at", "by", "in", "with", "one", "two", "three",
    "four", "five", "six", "now", "soon",
];

/// Mouth shapes used by the words; index 0 is the closed rest shape.
const SHAPES: [(f32, f32); 7] = [(0.05, 0.45), (0.2, 0.3), (0.2, 0.9), (0.55, 0.4), (0.55, 0.85), (0.95, 0.5), (0.8, 1.0)];
pub const FRAMES_PER_WORD: usize = 3;
pub const SAMPLE_RATE: u32 = 16_000;
pub const FPS: f32 = 25.0;
const SAMPLES_PER_FRAME: usize = 640;
/// Size of the uncropped video frame.
pub const RAW_SIZE: usize = 128;

/// The three shapes of word `w`; distinct words get distinct triples and
/// consecutive shapes always differ.
pub fn word_shapes(w: usize) -> [usize; 3] {
    let mut n = 0;
    for a in 1..SHAPES.len() {
        for b in 1..SHAPES.len() {
            for c in 1..SHAPES.len() {
                if a == b || b == c {
                    continue;
                }
                // spread the chosen triples over the space
                if n % 7 == 3 {
                    if n / 7 == w {
                        return [a, b, c];
                    }
                }
                n += 1;
            }
        }
    }
    unreachable!("word index {w} out of range")
}

/// Per-frame shape indices of an utterance: rest, then each word followed by
/// a rest frame.
pub fn utterance_shapes(words: &[usize]) -> Vec<usize> {
    let mut s = vec![0];
    for &w in words {
        s.extend(word_shapes(w));
        s.push(0);
    }
    s
}

/// Appearance of one speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity {
    pub skin: f32,
    pub lip: f32,
    pub dx: f32,
    pub dy: f32,
}

impl Identity {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            skin: rng.random_range(150.0..210.0),
            lip: rng.random_range(80.0..120.0),
            dx: rng.random_range(-4.0..4.0),
            dy: rng.random_range(-4.0..4.0),
        }
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders a 96×96 mouth frame.
pub fn render_mouth(id: &Identity, shape: (f32, f32)) -> Vec<u8> {
    let (open, width) = shape;
    let (cx, cy) = (48.0 + id.dx, 50.0 + id.dy);
    let (ax, ay) = (16.0 + 16.0 * width, 7.0 + 12.0 * open);
    let (ix, iy) = (ax * 0.72, (ay - 5.0).max(0.5) * open.sqrt());
    let mut out = vec![0u8; FRAME_SIZE * FRAME_SIZE];
    for y in 0..FRAME_SIZE {
        for x in 0..FRAME_SIZE {
            let (fx, fy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let shade = id.skin - 0.25 * (y as f32 - 48.0);
            let outer = ((fx / ax).powi(2) + (fy / ay).powi(2)).sqrt();
            let inner = ((fx / ix).powi(2) + (fy / iy).powi(2)).sqrt();
            let lip_mix = 1.0 - smoothstep(0.85, 1.1, outer);
            let hole_mix = 1.0 - smoothstep(0.7, 1.1, inner);
            let v = shade * (1.0 - lip_mix) + id.lip * lip_mix;
            let v = v * (1.0 - hole_mix) + 25.0 * hole_mix;
            out[y * FRAME_SIZE + x] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Synthesizes speech for a shape sequence: two phase-continuous tones per
/// frame whose pitches encode the shape, silent-ish on rest frames.
pub fn render_speech(shapes: &[usize], voice: f32) -> Vec<f32> {
    let mut out = Vec::with_capacity(shapes.len() * SAMPLES_PER_FRAME);
    let (mut p1, mut p2) = (0.0f32, 0.0f32);
    let dt = 1.0 / SAMPLE_RATE as f32;
    for &s in shapes {
        let (open, width) = SHAPES[s];
        let f1 = voice * (250.0 + 700.0 * open);
        let f2 = voice * (1100.0 + 1400.0 * width);
        let amp = if s == 0 { 0.02 } else { 0.3 };
        for _ in 0..SAMPLES_PER_FRAME {
            p1 = (p1 + std::f32::consts::TAU * f1 * dt) % std::f32::consts::TAU;
            p2 = (p2 + std::f32::consts::TAU * f2 * dt) % std::f32::consts::TAU;
            out.push(amp * (0.6 * p1.sin() + 0.4 * p2.sin()));
        }
    }
    out
}

/// Sizes of the generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub seed: u64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    /// Transcribed-speech utterances for synthesis.
    pub speech_utterances: usize,
    pub faces: usize,
    pub speakers: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train_utterances: 20,
            test_utterances: 6,
            speech_utterances: 10,
            faces: 8,
            speakers: 4,
            min_words: 2,
            max_words: 3,
        }
    }
}

/// Word sequences of `n` utterances. Every word appears at least once when
/// there is room for all twenty.
pub fn sentences<R: Rng + ?Sized>(n: usize, min_words: usize, max_words: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..WORDS.len()).collect();
    let mut out = Vec::with_capacity(n);
    let mut next = 0;
    for _ in 0..n {
        let k = rng.random_range(min_words..=max_words);
        let mut s = Vec::with_capacity(k);
        for _ in 0..k {
            if next == 0 {
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
            }
            s.push(order[next]);
            next = (next + 1) % order.len();
        }
        out.push(s);
    }
    out
}

pub fn transcript(words: &[usize]) -> String {
    words.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ")
}

/// Manifests of a generated corpus (paths relative to its root).
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    /// Uncropped videos with mouth boxes, audio and transcripts; split
    /// `train` or `test`.
    pub raw: Manifest,
    pub speech: Manifest,
    pub faces: Manifest,
}

/// Writes the corpus under `dir`: `raw.jsonl`, `speech.jsonl`, `faces.jsonl`
/// and the media they reference.
pub fn generate(dir: &Path, spec: &ToySpec) -> Result<ToyCorpus> {
    if spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::Config(format!("bad word range {}..={}", spec.min_words, spec.max_words)));
    }
    for sub in ["raw", "audio", "faces"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x70e]));
    let speakers: Vec<(Identity, f32)> = (0..spec.speakers.max(1))
        .map(|_| (Identity::sample(&mut rng), rng.random_range(0.85..1.15)))
        .collect();

    let n_av = spec.train_utterances + spec.test_utterances;
    let mut raw = Vec::new();
    for (i, words) in sentences(n_av, spec.min_words, spec.max_words, &mut rng).into_iter().enumerate() {
        let (ident, voice) = speakers[i % speakers.len()];
        let shapes = utterance_shapes(&words);
        let id = format!("av{i:03}");
        let (bx, by) = (rng.random_range(8..=24), rng.random_range(12..=28));
        let mut frames = Vec::with_capacity(shapes.len());
        for &s in &shapes {
            let mouth = render_mouth(&ident, SHAPES[s]);
            let mut canvas = vec![ident.skin.round() as u8; RAW_SIZE * RAW_SIZE];
            for r in 0..FRAME_SIZE {
                let dst = (by + r) * RAW_SIZE + bx;
                canvas[dst..dst + FRAME_SIZE].copy_from_slice(&mouth[r * FRAME_SIZE..(r + 1) * FRAME_SIZE]);
            }
            frames.push(canvas);
        }
        let video = RawVideo {
            width: RAW_SIZE,
            height: RAW_SIZE,
            channels: 1,
            fps: FPS,
            frames,
        };
        write_raw_video(&video, dir.join(format!("raw/{id}.svsr")))?;
        save_wav(
            &Waveform::new(render_speech(&shapes, voice), SAMPLE_RATE)?,
            dir.join(format!("audio/{id}.wav")),
        )?;
        let mut e = Entry::new(&id, Role::Real);
        e.split = if i < spec.train_utterances { "train" } else { "test" }.to_string();
        e.video_path = Some(format!("raw/{id}.svsr"));
        e.audio_path = Some(format!("audio/{id}.wav"));
        e.transcript = Some(transcript(&words));
        e.bbox = Some(BBox {
            x: bx,
            y: by,
            width: FRAME_SIZE,
            height: FRAME_SIZE,
        });
        e.num_frames = Some(shapes.len());
        raw.push(e);
    }

    let mut speech = Vec::new();
    for (i, words) in sentences(spec.speech_utterances, spec.min_words, spec.max_words, &mut rng)
        .into_iter()
        .enumerate()
    {
        let voice = rng.random_range(0.85..1.15);
        let id = format!("sp{i:03}");
        save_wav(
            &Waveform::new(render_speech(&utterance_shapes(&words), voice), SAMPLE_RATE)?,
            dir.join(format!("audio/{id}.wav")),
        )?;
        let mut e = Entry::new(&id, Role::Speech);
        e.audio_path = Some(format!("audio/{id}.wav"));
        e.transcript = Some(transcript(&words));
        speech.push(e);
    }

    let mut faces = Vec::new();
    for i in 0..spec.faces {
        let ident = Identity::sample(&mut rng);
        let id = format!("face{i:03}");
        save_mouth_image(&MouthImage::new(render_mouth(&ident, SHAPES[0]))?, dir.join(format!("faces/{id}.png")))?;
        let mut e = Entry::new(&id, Role::Face);
        e.image_path = Some(format!("faces/{id}.png"));
        faces.push(e);
    }

    let corpus = ToyCorpus {
        raw: Manifest::new(raw, dir),
        speech: Manifest::new(speech, dir),
        faces: Manifest::new(faces, dir),
    };
    corpus.raw.save(dir.join("raw.jsonl"))?;
    corpus.speech.save(dir.join("speech.jsonl"))?;
    corpus.faces.save(dir.join("faces.jsonl"))?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn words_have_distinct_shapes() {
        let all: HashSet<[usize; 3]> = (0..WORDS.len()).map(word_shapes).collect();
        assert_eq!(all.len(), WORDS.len());
        for w in 0..WORDS.len() {
            let s = word_shapes(w);
            assert!(s.iter().all(|&k| k != 0));
            assert!(s[0] != s[1] && s[1] != s[2]);
        }
    }

    #[test]
    fn speech_matches_frame_count() {
        let shapes = utterance_shapes(&[0, 5]);
        assert_eq!(shapes.len(), 1 + 2 * (FRAMES_PER_WORD + 1));
        assert_eq!(render_speech(&shapes, 1.0).len(), shapes.len() * SAMPLES_PER_FRAME);
    }

    #[test]
    fn sentences_cover_the_vocabulary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sentences(10, 2, 3, &mut rng);
        let used: HashSet<usize> = s.iter().flatten().copied().collect();
        assert_eq!(used.len(), WORDS.len());
    }

    #[test]
    fn mouths_differ_by_shape() {
        let id = Identity {
            skin: 180.0,
            lip: 100.0,
            dx: 0.0,
            dy: 0.0,
        };
        let a = render_mouth(&id, SHAPES[0]);
        let b = render_mouth(&id, SHAPES[5]);
        let diff: u32 = a.iter().zip(&b).map(|(x, y)| x.abs_diff(*y) as u32).sum();
        assert!(diff > 50_000, "{diff}");
    }
}
