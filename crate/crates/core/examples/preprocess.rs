//! Crops raw videos to 96×96 mouth clips using each entry's bounding box and
//! splits the result into train and test manifests.
//!
//! cargo run --example preprocess -- [out_dir]

use std::path::PathBuf;

use synthvsr::media::read_clip;
use synthvsr::pipeline::preprocess_manifest;
use synthvsr::toy::{self, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("example-out/preprocess"));
    let corpus = toy::generate(&out.join("toy"), &ToySpec::default())?;
    let clips = preprocess_manifest(&corpus.raw, &out.join("clips"))?;
    clips.split("train").save(out.join("train.jsonl"))?;
    clips.split("test").save(out.join("test.jsonl"))?;
    let first = &clips.entries[0];
    let clip = read_clip(clips.require(first, "video")?)?;
    println!("{} clips; {} has {} frames at {} fps", clips.len(), first.id, clip.num_frames(), clip.fps());
    println!("manifests in {}", out.display());
    Ok(())
}
