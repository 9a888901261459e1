use std::path::{Path, PathBuf};
use std::time::SystemTime;

use crate::error::{Error, Result};
use crate::nn::{average_tensors, Checkpoint};

/// The last `k` of `paths` ordered by modification time (ties broken by file
/// name), oldest first.
pub fn select_last(paths: &[PathBuf], k: usize) -> Result<Vec<PathBuf>> {
    let mut stamped: Vec<(SystemTime, PathBuf)> = paths
        .iter()
        .map(|p| {
            let mtime = std::fs::metadata(p).and_then(|m| m.modified()).map_err(|e| Error::io(p, e))?;
            Ok((mtime, p.clone()))
        })
        .collect::<Result<_>>()?;
    stamped.sort();
    let skip = stamped.len().saturating_sub(k);
    Ok(stamped.into_iter().skip(skip).map(|(_, p)| p).collect())
}

/// Element-wise mean of the tensors of several checkpoints. Metadata is
/// taken from the newest (last) checkpoint and records the sources.
pub fn average_checkpoints<P: AsRef<Path>>(paths: &[P]) -> Result<Checkpoint> {
    if paths.is_empty() {
        return Err(Error::Checkpoint("no checkpoints to average".into()));
    }
    let ckpts = paths.iter().map(Checkpoint::load).collect::<Result<Vec<_>>>()?;
    let maps: Vec<_> = ckpts.iter().map(|c| c.tensors.clone()).collect();
    let tensors = average_tensors(&maps)?;
    let last = ckpts.last().unwrap();
    let mut out = Checkpoint::new(last.kind(), tensors);
    for (k, v) in &last.meta {
        out.meta.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let sources: Vec<String> = paths
        .iter()
        .map(|p| p.as_ref().file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    Ok(out.with_meta("averaged_from", sources.join(",")))
}
