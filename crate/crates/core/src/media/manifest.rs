use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Which dataset an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Labeled video (video + transcript).
    Real,
    /// Unlabeled audio-visual pair (video + audio).
    Av,
    /// Transcribed speech (audio + transcript).
    Speech,
    /// Face / lip image.
    Face,
    /// Generated video with the transcript of its source speech.
    Synth,
}

impl Role {
    fn requirements(self) -> (&'static str, [bool; 4]) {
        // video, audio, image, transcript
        match self {
            Role::Real => ("video+transcript", [true, false, false, true]),
            Role::Av => ("video+audio", [true, true, false, false]),
            Role::Speech => ("audio+transcript", [false, true, false, true]),
            Role::Face => ("image", [false, false, true, false]),
            Role::Synth => ("video+transcript", [true, false, false, true]),
        }
    }
}

fn default_split() -> String {
    "train".to_string()
}

/// One line of a JSON-lines manifest. Paths are relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub role: Role,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_hash: Option<String>,
}

impl Entry {
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        Self {
            id: id.into(),
            role,
            split: default_split(),
            video_path: None,
            audio_path: None,
            image_path: None,
            transcript: None,
            bbox: None,
            num_frames: None,
            speech_id: None,
            face_id: None,
            replica: None,
            generator_hash: None,
        }
    }

    fn paths(&self) -> impl Iterator<Item = &String> {
        [&self.video_path, &self.audio_path, &self.image_path].into_iter().flatten()
    }
}

/// A dataset listing: entries plus the directory their relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<Entry>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            base_dir: base_dir.into(),
        }
    }

    /// Parses and validates a manifest, checking that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: Entry = serde_json::from_str(&line).map_err(|e| {
                Error::Manifest(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            entries.push(entry);
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { entries, base_dir };
        m.validate(true)?;
        Ok(m)
    }

    /// Writes the manifest as JSON lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Checks id uniqueness and per-role required fields; optionally that files exist.
    pub fn validate(&self, check_paths: bool) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", e.id)));
            }
            let (label, [video, audio, image, transcript]) = e.role.requirements();
            let have = [
                e.video_path.is_some(),
                e.audio_path.is_some(),
                e.image_path.is_some(),
                e.transcript.is_some(),
            ];
            if (video && !have[0]) || (audio && !have[1]) || (image && !have[2]) || (transcript && !have[3]) {
                return Err(Error::Manifest(format!(
                    "entry {:?} with role {:?} needs {label}",
                    e.id, e.role
                )));
            }
            if check_paths {
                for p in e.paths() {
                    let full = self.resolve(p);
                    if !full.exists() {
                        return Err(Error::Manifest(format!(
                            "entry {:?} references missing file {}",
                            e.id,
                            full.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn count(&self, role: Role) -> usize {
        self.with_role(role).count()
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entries of the given split.
    pub fn split(&self, split: &str) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Resolves an entry's path field or reports which field is missing.
    pub fn require(&self, entry: &Entry, field: &str) -> Result<PathBuf> {
        let v = match field {
            "video" => &entry.video_path,
            "audio" => &entry.audio_path,
            "image" => &entry.image_path,
            other => return Err(Error::Manifest(format!("unknown path field {other}"))),
        };
        v.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Manifest(format!("entry {:?} has no {field} path", entry.id)))
    }

    /// Rebases relative paths so the manifest can be saved in `new_base`.
    pub fn rebased(&self, new_base: &Path) -> Self {
        let rel = |p: &Option<String>| {
            p.as_ref().map(|s| {
                let full = self.resolve(s);
                relative_to(&full, new_base).to_string_lossy().into_owned()
            })
        };
        let entries = self
            .entries
            .iter()
            .map(|e| Entry {
                video_path: rel(&e.video_path),
                audio_path: rel(&e.audio_path),
                image_path: rel(&e.image_path),
                ..e.clone()
            })
            .collect();
        Self {
            entries,
            base_dir: new_base.to_path_buf(),
        }
    }
}

/// `path` relative to `base` when both are absolute or both relative; `path` otherwise.
pub(crate) fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let (Ok(p), Ok(b)) = (std::path::absolute(path), std::path::absolute(base)) else {
        return path.to_path_buf();
    };
    let pc: Vec<_> = p.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    if common == 0 {
        return p;
    }
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &pc[common..] {
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_role_checks() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"x").unwrap();
        let mut e = Entry::new("s1", Role::Speech);
        e.audio_path = Some("a.wav".into());
        e.transcript = Some("hello world".into());
        let m = Manifest::new(vec![e.clone()], dir.path());
        let p = dir.path().join("m.jsonl");
        m.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.count(Role::Speech), 1);

        let mut bad = e.clone();
        bad.transcript = None;
        assert!(Manifest::new(vec![bad], dir.path()).validate(false).is_err());
        assert!(Manifest::new(vec![e.clone(), e.clone()], dir.path()).validate(false).is_err());

        let mut missing = e;
        missing.audio_path = Some("nope.wav".into());
        let err = Manifest::new(vec![missing], dir.path()).validate(true).unwrap_err();
        assert!(err.to_string().contains("missing file"));
    }

    #[test]
    fn relative_paths() {
        assert_eq!(relative_to(Path::new("/a/b/c.svsr"), Path::new("/a/d")), PathBuf::from("../b/c.svsr"));
        assert_eq!(relative_to(Path::new("/a/b/c"), Path::new("/a/b")), PathBuf::from("c"));
    }
}
