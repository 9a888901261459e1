//! Flat key/value run configuration: defaults, TOML files and `--key value`
//! overrides, with a content hash for run directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Every recognized key with its default (`None`: must be given) and a
/// short description. An empty default means "unset".
pub const KEYS: &[(&str, Option<&str>, &str)] = &[
    ("seed", None, "master seed for every random choice of the run"),
    ("run.root", Some("runs"), "directory that holds run directories"),
    ("data.fps", Some("25"), "video frame rate"),
    ("preprocess.input", Some(""), "manifest of raw videos with mouth boxes"),
    ("vocab.corpus", Some(""), "manifest(s) whose transcripts train the vocabulary, comma separated"),
    ("vocab.size", Some("48"), "learned subword pieces"),
    ("lam.data", Some(""), "manifest of clips with audio for lip-animation training"),
    ("lam.width", Some("0.125"), "generator/discriminator channel multiplier"),
    ("lam.loss", Some("baseline"), "loss preset: baseline | vl | v | l | avox"),
    ("lam.recognizer", Some(""), "frozen recognizer checkpoint for the perceptual loss"),
    ("lam.steps", Some("1000"), "training steps"),
    ("lam.window", Some("8"), "frames per training window"),
    ("lam.disc_frames", Some("2"), "frames scored by the frame discriminator per step"),
    ("lam.lr_g", Some("1e-4"), "generator learning rate"),
    ("lam.lr_d_img", Some("1e-4"), "frame discriminator learning rate"),
    ("lam.lr_d_seq", Some("1e-5"), "sequence discriminator learning rate"),
    ("lam.checkpoint_every", Some("250"), "checkpoint interval in steps"),
    ("lam.stop_below", Some(""), "stop once smoothed reconstruction loss drops below this"),
    ("synth.generator", Some(""), "lip-animation checkpoint"),
    ("synth.speech", Some(""), "manifest of transcribed speech"),
    ("synth.faces", Some(""), "manifest of face images"),
    ("synth.n_per", Some("2"), "synthetic clips per speech utterance"),
    ("synth.max_duration_s", Some(""), "skip longer utterances"),
    ("synth.max_failure_fraction", Some("0.05"), "abort when more clips fail"),
    ("vsr.preset", Some("desk"), "recognizer size: desk | small | base | large"),
    ("vsr.vocab", Some(""), "vocabulary file"),
    ("vsr.train", Some(""), "labeled real training manifest"),
    ("vsr.synth", Some(""), "synthetic training manifest (optional)"),
    ("vsr.mix_weights", Some(""), "real,synth mixing weights; empty = proportional to size"),
    ("vsr.init_frontend", Some(""), "recognizer checkpoint whose front-end seeds this model"),
    ("vsr.steps", Some("2000"), "training steps"),
    ("vsr.peak_lr", Some("1e-3"), "peak learning rate"),
    ("vsr.warmup", Some("100"), "warm-up steps"),
    ("vsr.weight_decay", Some("0.01"), "decoupled weight decay"),
    ("vsr.clip_norm", Some("5"), "gradient norm cap; empty disables"),
    ("vsr.frame_budget", Some("120"), "maximum frames per batch"),
    ("vsr.max_batch", Some("8"), "maximum clips per batch"),
    ("vsr.steps_per_epoch", Some("100"), "steps between checkpoints"),
    ("vsr.average_last", Some("1"), "average this many final checkpoints"),
    ("vsr.eval_every", Some("100"), "training-set WER interval in steps; 0 disables"),
    ("vsr.stop_wer", Some(""), "stop once training-set WER reaches this"),
    ("aug.hflip", Some("0.5"), "horizontal flip probability"),
    ("aug.crop", Some("88"), "random crop side; empty disables"),
    ("aug.max_masks", Some("1"), "time masks per clip"),
    ("aug.max_mask_fraction", Some("0.4"), "longest time mask as a fraction of the clip"),
    ("decode.checkpoint", Some(""), "recognizer checkpoint"),
    ("decode.manifest", Some(""), "manifest to decode"),
    ("decode.beam", Some("1"), "beam width"),
    ("decode.max_len", Some(""), "maximum hypothesis tokens; empty = twice the frame count"),
    ("eval.hypotheses", Some(""), "hypotheses written by decode; empty = decode now"),
    ("mismatch.real_model", Some(""), "recognizer trained on real data only"),
    ("mismatch.mix_model", Some(""), "recognizer trained on real and synthetic data"),
    ("mismatch.test", Some(""), "real test manifest with audio"),
    ("report.dir", Some(""), "run directory to render plots for"),
];

const UNHASHED: &[&str] = &["run.root"];

/// Effective configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            toml::Value::String(s) => out.push((key, s.clone())),
            other => out.push((key, other.to_string())),
        }
    }
}

impl RunConfig {
    /// Defaults only.
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .filter_map(|(k, d, _)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        Self { values }
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Result<Self> {
        self.set(key, value)?;
        Ok(self)
    }

    /// Applies a TOML document; nested tables become dotted keys.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        for (k, v) in pairs {
            self.set(&k, v)?;
        }
        Ok(())
    }

    /// Applies `--key value` / `--key=value` arguments.
    pub fn apply_args<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(a) = it.next() {
            let Some(flag) = a.strip_prefix("--") else {
                return Err(Error::Config(format!("expected `--key value`, found `{a}`")));
            };
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| Error::Config(format!("`--{flag}` needs a value")))?;
                    (flag.to_string(), v.to_string())
                }
            };
            self.set(&key, value)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then command-line overrides.
    pub fn load<S: AsRef<str>>(file: Option<&Path>, args: &[S]) -> Result<Self> {
        let mut cfg = Self::defaults();
        if let Some(p) = file {
            cfg.apply_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?;
        }
        cfg.apply_args(args)?;
        Ok(cfg)
    }

    /// Raw value; `None` when unset or empty.
    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key), "unregistered key {key}");
        self.values.get(key).map(String::as_str).filter(|s| !s.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("configuration key `{key}` must be set")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("`{key}` = `{v}` is not a valid {}", std::any::type_name::<T>())))
    }

    pub fn value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        self.parse(key, v)
    }

    pub fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key).map(|v| self.parse(key, v)).transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// The mandatory master seed.
    pub fn seed(&self) -> Result<u64> {
        self.value("seed")
    }

    /// Every key with its effective value, one `key = "value"` per line.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            s.push_str(&format!("\"{k}\" = {}\n", toml::Value::String(v.clone())));
        }
        s
    }

    /// SHA-256 over the sorted effective values (excluding the run root).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if !UNHASHED.contains(&k.as_str()) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::defaults().set("vsr.stepz", "3").is_err());
        assert!(RunConfig::load(None, &["--nope", "1"]).is_err());
        let mut c = RunConfig::defaults();
        assert!(c.apply_toml("[lam]\nbogus = 1\n").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let c = RunConfig::defaults();
        assert!(c.seed().is_err());
        assert_eq!(c.with("seed", "7").unwrap().seed().unwrap(), 7);
    }

    #[test]
    fn file_then_args() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\n[vsr]\nsteps = 10\npreset = \"small\"\n").unwrap();
        let c = RunConfig::load(Some(&p), &["--vsr.steps", "20", "--aug.crop="]).unwrap();
        assert_eq!(c.value::<usize>("vsr.steps").unwrap(), 20);
        assert_eq!(c.get("vsr.preset"), Some("small"));
        assert_eq!(c.opt::<usize>("aug.crop").unwrap(), None);
        assert_eq!(c.seed().unwrap(), 3);
    }

    #[test]
    fn hash_tracks_values_not_root() {
        let a = RunConfig::defaults().with("seed", "1").unwrap();
        let b = a.clone().with("run.root", "/elsewhere").unwrap();
        let c = a.clone().with("seed", "2").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn serialized_config_round_trips() {
        let a = RunConfig::defaults().with("seed", "5").unwrap().with("vsr.synth", "a b\"c").unwrap();
        let mut b = RunConfig::defaults();
        b.apply_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
    }
}
