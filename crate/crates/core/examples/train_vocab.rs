//! Learns a byte-pair subword vocabulary from transcripts and round-trips a
//! few sentences through it.
//!
//! cargo run --example train_vocab -- [size]

use synthvsr::tokenizer::train_vocab;
use synthvsr::toy::{self, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(48);
    let dir = tempfile::tempdir()?;
    let corpus = toy::generate(dir.path(), &ToySpec::default())?;
    let texts: Vec<String> = corpus.raw.entries.iter().chain(&corpus.speech.entries).filter_map(|e| e.transcript.clone()).collect();
    let vocab = train_vocab(&texts, size)?;
    println!("{} pieces ({} learned)", vocab.len(), vocab.learned().len());
    for t in texts.iter().take(4) {
        let ids = vocab.encode(t);
        let pieces: Vec<&str> = ids.ids().iter().filter_map(|&i| vocab.piece(i)).collect();
        println!("{t:<28} -> {pieces:?} -> {:?}", vocab.decode(&ids)?);
    }
    Ok(())
}
