//! Speech-driven lip animation and synthetic supervision for visual speech
//! recognition.
//!
//! The crate covers the whole pipeline: media preprocessing into a shared
//! 96×96 mouth-frame space, a temporal-GAN lip animation generator conditioned
//! on speech, a lip-reading recognizer (3D-conv front-end, Conformer encoder,
//! Transformer decoder with joint CTC/attention training), synthetic dataset
//! construction from transcribed speech and face images, semi-supervised
//! training on real ∪ synthetic data, and WER evaluation.

pub mod bridge;
pub mod config;
pub mod error;
pub mod eval;
pub mod lipgen;
pub mod media;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synthgen;
pub mod tokenizer;
pub mod toy;
pub mod trainer;
pub mod vsr;

pub use error::{Error, Result};
