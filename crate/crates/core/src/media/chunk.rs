use super::Waveform;
use crate::error::{Error, Result};

/// Window geometry used to cut speech into one chunk per video frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkConfig {
    pub window_ms: u32,
    pub stride_ms: u32,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            window_ms: 200,
            stride_ms: 40,
        }
    }
}

/// `n × L` matrix of overlapping speech windows, row `k` aligned with video frame `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechChunks {
    data: Vec<f32>,
    n: usize,
    len: usize,
    pub config: ChunkConfig,
    pub sample_rate: u32,
}

impl SpeechChunks {
    pub fn from_rows(data: Vec<f32>, n: usize, len: usize, config: ChunkConfig, sample_rate: u32) -> Result<Self> {
        if n == 0 || len == 0 || data.len() != n * len {
            return Err(Error::Shape(format!(
                "speech chunk buffer of {} values does not form {n} rows of {len}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n,
            len,
            config,
            sample_rate,
        })
    }

    /// Number of chunks (equals the number of video frames).
    pub fn count(&self) -> usize {
        self.n
    }

    /// Samples per chunk.
    pub fn chunk_len(&self) -> usize {
        self.len
    }

    pub fn chunk(&self, k: usize) -> &[f32] {
        &self.data[k * self.len..(k + 1) * self.len]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rows `start..start + count`.
    pub fn window(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.n {
            return Err(Error::Shape(format!(
                "chunk window {start}..{} outside 0..{}",
                start + count,
                self.n
            )));
        }
        Self::from_rows(
            self.data[start * self.len..(start + count) * self.len].to_vec(),
            count,
            self.len,
            self.config,
            self.sample_rate,
        )
    }
}

/// Cuts `wave` into 200 ms windows at a 40 ms stride, one per video frame.
pub fn chunk_speech(wave: &Waveform, fps: f32) -> Result<SpeechChunks> {
    chunk_speech_with(wave, fps, ChunkConfig::default())
}

/// Chunk `k` is centred on the midpoint of frame period `k` and zero-padded
/// wherever it extends past the signal. The number of chunks is
/// `round(duration · fps)`, at least one.
pub fn chunk_speech_with(wave: &Waveform, fps: f32, config: ChunkConfig) -> Result<SpeechChunks> {
    if wave.is_empty() {
        return Err(Error::Invalid("cannot chunk an empty waveform".into()));
    }
    if !(fps > 0.0) || (fps as f64 * config.stride_ms as f64 - 1000.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!(
            "fps {fps} does not match the {} ms chunk stride",
            config.stride_ms
        )));
    }
    let sr = wave.sample_rate() as u64;
    let hop2 = 2 * sr * config.stride_ms as u64 / 1000;
    let len = (sr * config.window_ms as u64 / 1000) as usize;
    let n = ((wave.duration_s() * fps as f64).round() as usize).max(1);
    let samples = wave.samples();
    let mut data = vec![0f32; n * len];
    for k in 0..n {
        // centre = (k + 0.5) · hop, kept in integer arithmetic
        let centre = ((2 * k as u64 + 1) * hop2 / 4) as i64;
        let start = centre - (len / 2) as i64;
        let row = &mut data[k * len..(k + 1) * len];
        for (j, out) in row.iter_mut().enumerate() {
            let idx = start + j as i64;
            if idx >= 0 && (idx as usize) < samples.len() {
                *out = samples[idx as usize];
            }
        }
    }
    SpeechChunks::from_rows(data, n, len, config, wave.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Waveform {
        // distinct, recognisable values: sample i holds i / n
        Waveform::new((0..n).map(|i| i as f32 / n as f32).collect(), 16_000).unwrap()
    }

    #[test]
    fn three_seconds_gives_75_chunks() {
        let c = chunk_speech(&ramp(48_000), 25.0).unwrap();
        assert_eq!(c.count(), 75);
        assert_eq!(c.chunk_len(), 3200);
    }

    #[test]
    fn single_stride_is_one_padded_chunk() {
        let w = Waveform::new(vec![0.5; 640], 16_000).unwrap();
        let c = chunk_speech(&w, 25.0).unwrap();
        assert_eq!(c.count(), 1);
        let row = c.chunk(0);
        assert_eq!(row.len(), 3200);
        // centre 320, window [-1280, 1920): real samples occupy [1280, 1920)
        assert!(row[..1280].iter().all(|&v| v == 0.0));
        assert!(row[1280..1920].iter().all(|&v| v == 0.5));
        assert!(row[1920..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_second_window_extents() {
        let n = 16_000;
        let w = ramp(n);
        let c = chunk_speech(&w, 25.0).unwrap();
        assert_eq!(c.count(), 25);
        // k = 0: centre 320, covers [-1280, 1920)
        let r0 = c.chunk(0);
        assert!(r0[..1280].iter().all(|&v| v == 0.0));
        assert_eq!(r0[1280], 0.0 / n as f32);
        assert_eq!(r0[3199], 1919.0 / n as f32);
        // k = 12: centre 8000, covers [6400, 9600)
        let r12 = c.chunk(12);
        assert_eq!(r12[0], 6400.0 / n as f32);
        assert_eq!(r12[3199], 9599.0 / n as f32);
        // k = 24: centre 15680, covers [14080, 17280), padded past 16000
        let r24 = c.chunk(24);
        assert_eq!(r24[0], 14080.0 / n as f32);
        assert_eq!(r24[1919], 15999.0 / n as f32);
        assert!(r24[1920..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_and_mismatched_rate_rejected() {
        let w = Waveform::new(vec![], 16_000).unwrap();
        assert!(chunk_speech(&w, 25.0).is_err());
        assert!(chunk_speech(&ramp(100), 30.0).is_err());
    }
}
