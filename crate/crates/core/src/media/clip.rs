use std::io::Write;
use std::path::Path;

use super::{DEFAULT_FPS, FRAME_PIXELS, FRAME_SIZE};
use crate::error::{Error, Result};

/// Container magic bytes.
pub const MAGIC: &[u8; 4] = b"SVSR";
/// Header: magic, frame count (u32), height (u16), width (u16), channels (u8), fps (f32).
pub const HEADER_LEN: usize = 4 + 4 + 2 + 2 + 1 + 4;

/// Uncropped video of arbitrary frame size, stored in the same container as
/// [`VideoClip`]. Frames are row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVideo {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub fps: f32,
    pub frames: Vec<Vec<u8>>,
}

impl RawVideo {
    pub fn frame_len(&self) -> usize {
        self.width * self.height * self.channels
    }
}

/// Sequence of 96×96 grayscale mouth frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    data: Vec<u8>,
    fps: f32,
}

impl VideoClip {
    /// Builds a clip from `T · 96 · 96` concatenated frame bytes.
    pub fn new(data: Vec<u8>, fps: f32) -> Result<Self> {
        if data.is_empty() || data.len() % FRAME_PIXELS != 0 {
            return Err(Error::Shape(format!(
                "{} bytes is not a positive multiple of a {FRAME_SIZE}x{FRAME_SIZE} frame",
                data.len()
            )));
        }
        if !(fps > 0.0) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { data, fps })
    }

    pub fn from_frames<F: AsRef<[u8]>>(frames: &[F], fps: f32) -> Result<Self> {
        let mut data = Vec::with_capacity(frames.len() * FRAME_PIXELS);
        for (i, f) in frames.iter().enumerate() {
            let f = f.as_ref();
            if f.len() != FRAME_PIXELS {
                return Err(Error::Shape(format!("frame {i} has {} pixels", f.len())));
            }
            data.extend_from_slice(f);
        }
        Self::new(data, fps)
    }

    /// A clip that repeats one frame `n` times.
    pub fn still(frame: &[u8], n: usize) -> Result<Self> {
        Self::from_frames(&vec![frame; n], DEFAULT_FPS)
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / FRAME_PIXELS
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        &self.data[t * FRAME_PIXELS..(t + 1) * FRAME_PIXELS]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [u8] {
        &mut self.data[t * FRAME_PIXELS..(t + 1) * FRAME_PIXELS]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Frames `start..start + len` as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.num_frames() {
            return Err(Error::Shape(format!(
                "frame range {start}..{} outside 0..{}",
                start + len,
                self.num_frames()
            )));
        }
        Self::new(
            self.data[start * FRAME_PIXELS..(start + len) * FRAME_PIXELS].to_vec(),
            self.fps,
        )
    }

    /// Pixel intensities scaled to [0, 1].
    pub fn to_unit_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&p| p as f32 / 255.0).collect()
    }

    /// Inverse of [`VideoClip::to_unit_f32`], rounding and clamping.
    pub fn from_unit_f32(values: &[f32], fps: f32) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Self::new(data, fps)
    }
}

fn encode(width: usize, height: usize, channels: usize, fps: f32, n: usize, payload: &[u8]) -> Result<Vec<u8>> {
    if width > u16::MAX as usize || height > u16::MAX as usize || channels > u8::MAX as usize {
        return Err(Error::Shape(format!(
            "frame geometry {width}x{height}x{channels} exceeds container limits"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(height as u16).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.push(channels as u8);
    out.extend_from_slice(&fps.to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes a mouth clip to the SVSR container.
pub fn write_clip(clip: &VideoClip, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(FRAME_SIZE, FRAME_SIZE, 1, clip.fps, clip.num_frames(), &clip.data)?;
    write_bytes(path.as_ref(), &bytes)
}

/// Writes an uncropped video to the SVSR container.
pub fn write_raw_video(video: &RawVideo, path: impl AsRef<Path>) -> Result<()> {
    let flen = video.frame_len();
    let mut payload = Vec::with_capacity(flen * video.frames.len());
    for (i, f) in video.frames.iter().enumerate() {
        if f.len() != flen {
            return Err(Error::Shape(format!("raw frame {i} has {} bytes, expected {flen}", f.len())));
        }
        payload.extend_from_slice(f);
    }
    let bytes = encode(video.width, video.height, video.channels, video.fps, video.frames.len(), &payload)?;
    write_bytes(path.as_ref(), &bytes)
}

/// Reads any SVSR container.
pub fn read_raw_video(path: impl AsRef<Path>) -> Result<RawVideo> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
    let width = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
    let channels = bytes[12] as usize;
    let fps = f32::from_le_bytes(bytes[13..17].try_into().unwrap());
    let flen = width * height * channels;
    let expected = HEADER_LEN + n * flen;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Invalid(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - expected
        )));
    }
    let frames = bytes[HEADER_LEN..].chunks(flen.max(1)).take(n).map(<[u8]>::to_vec).collect();
    Ok(RawVideo {
        width,
        height,
        channels,
        fps,
        frames,
    })
}

/// Reads a mouth clip, requiring 96×96 single-channel frames.
pub fn read_clip(path: impl AsRef<Path>) -> Result<VideoClip> {
    let path = path.as_ref();
    let raw = read_raw_video(path)?;
    if raw.width != FRAME_SIZE || raw.height != FRAME_SIZE || raw.channels != 1 {
        return Err(Error::Shape(format!(
            "{}: expected {FRAME_SIZE}x{FRAME_SIZE}x1 frames, found {}x{}x{}",
            path.display(),
            raw.height,
            raw.width,
            raw.channels
        )));
    }
    VideoClip::new(raw.frames.concat(), raw.fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_clip_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zero.svsr");
        let clip = VideoClip::new(vec![0; FRAME_PIXELS], 25.0).unwrap();
        write_clip(&clip, &p).unwrap();
        assert_eq!(read_clip(&p).unwrap(), clip);
    }

    #[test]
    fn random_clip_round_trips_with_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rand.svsr");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<u8> = (0..75 * FRAME_PIXELS).map(|_| rng.random()).collect();
        let clip = VideoClip::new(data, 25.0).unwrap();
        write_clip(&clip, &p).unwrap();
        // 17-byte header + 75 frames of 9216 bytes
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 17 + 75 * 9216);
        assert_eq!(read_clip(&p).unwrap(), clip);
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.svsr");
        let clip = VideoClip::new(vec![7; 2 * FRAME_PIXELS], 25.0).unwrap();
        write_clip(&clip, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        std::fs::write(&p, &wrong).unwrap();
        let err = read_clip(&p).unwrap_err();
        assert!(matches!(err, Error::BadMagic(_)));
        assert!(err.to_string().contains("bad magic"));

        bytes.truncate(bytes.len() - 10);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_clip(&p).unwrap_err(), Error::Truncated { .. }));
    }

    #[test]
    fn raw_video_keeps_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.svsr");
        let v = RawVideo {
            width: 5,
            height: 3,
            channels: 3,
            fps: 25.0,
            frames: vec![vec![1; 45], vec![2; 45]],
        };
        write_raw_video(&v, &p).unwrap();
        assert_eq!(read_raw_video(&p).unwrap(), v);
        assert!(matches!(read_clip(&p).unwrap_err(), Error::Shape(_)));
    }
}
