use std::path::Path;

use crate::error::{Error, Result};

/// Mono speech signal with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Invalid("sample_rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Invalid(format!(
                "sample {i} = {} is not a finite value in [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a 16-bit PCM mono WAV file, rescaling samples by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::AudioFormat(format!(
            "channels={} unsupported",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::AudioFormat("sample_format=float unsupported".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::AudioFormat(format!(
            "bits_per_sample={} unsupported",
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::AudioFormat(format!("{}: {e}", path.display())))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a waveform as 16-bit PCM mono WAV.
pub fn save_wav(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &wave.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}
