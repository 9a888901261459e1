//! Generates the synthetic toy corpus used throughout the examples: mouth
//! videos with matching two-tone audio, a transcribed-speech pool and a pool
//! of neutral face crops.
//!
//! cargo run --example toy_world -- [out_dir]

use std::path::PathBuf;

use synthvsr::toy::{self, ToySpec, WORDS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/toy"));
    let corpus = toy::generate(&out, &ToySpec::default())?;
    println!("vocabulary of {} words: {}", WORDS.len(), WORDS.join(" "));
    println!("raw videos:   {} ({} train, {} test)", corpus.raw.len(), corpus.raw.split("train").len(), corpus.raw.split("test").len());
    println!("speech clips: {}", corpus.speech.len());
    println!("face images:  {}", corpus.faces.len());
    for e in corpus.raw.entries.iter().take(3) {
        println!("  {} [{}] {:?}", e.id, e.split, e.transcript.as_deref().unwrap_or(""));
    }
    println!("written to {}", out.display());
    Ok(())
}
