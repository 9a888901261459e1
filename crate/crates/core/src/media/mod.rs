//! Audio/video data model, on-disk formats and preprocessing.
//!
//! Everything downstream works in a shared input space: 96×96 single-channel
//! mouth frames at a fixed frame rate, and 16 kHz mono speech cut into one
//! overlapping window per video frame.

mod chunk;
mod clip;
mod crop;
mod manifest;
mod rotation;
mod sample;
mod wav;

pub use chunk::{chunk_speech, chunk_speech_with, ChunkConfig, SpeechChunks};
pub use clip::{read_clip, read_raw_video, write_clip, write_raw_video, RawVideo, VideoClip, HEADER_LEN, MAGIC};
pub use crop::{crop_mouth, load_image, load_mouth_image, resize_bilinear, save_mouth_image, BBox, Image, MouthImage};
pub use manifest::{Entry, Manifest, Role};
pub use rotation::{Rotation, RotationSequence};
pub use sample::sample_frames;
pub use wav::{load_wav, save_wav, Waveform};

/// Side length of a mouth-region frame.
pub const FRAME_SIZE: usize = 96;
/// Pixels per mouth-region frame.
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;
/// Default video frame rate.
pub const DEFAULT_FPS: f32 = 25.0;
/// Default audio sample rate.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
