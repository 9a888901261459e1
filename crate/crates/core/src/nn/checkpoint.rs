use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype as StDtype, SafeTensors, TensorView};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "synthvsr-checkpoint";
pub const FORMAT_VERSION: &str = "1";

/// Named tensors plus string metadata, stored as safetensors. The metadata
/// always carries `format` and `version`; callers add `kind`, `config`, `step`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn st_err(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn new(kind: &str, tensors: BTreeMap<String, Tensor>) -> Self {
        let meta = BTreeMap::from([
            ("format".to_string(), FORMAT_NAME.to_string()),
            ("version".to_string(), FORMAT_VERSION.to_string()),
            ("kind".to_string(), kind.to_string()),
        ]);
        Self { meta, tensors }
    }

    pub fn kind(&self) -> &str {
        self.meta.get("kind").map(String::as_str).unwrap_or("")
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    /// Tensors whose name starts with `prefix.`, with the prefix stripped.
    pub fn sub(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut raw: Vec<(String, StDtype, Vec<usize>, Vec<u8>)> = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let t = t.flatten_all()?;
            let (dtype, bytes) = match t.dtype() {
                DType::F64 => (
                    StDtype::F64,
                    t.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
                ),
                _ => (
                    StDtype::F32,
                    t.to_dtype(DType::F32)?
                        .to_vec1::<f32>()?
                        .iter()
                        .flat_map(|v| v.to_le_bytes())
                        .collect(),
                ),
            };
            raw.push((name.clone(), dtype, self.tensors[name].dims().to_vec(), bytes));
        }
        let views = raw
            .iter()
            .map(|(n, d, s, b)| TensorView::new(*d, s.clone(), b).map(|v| (n.clone(), v)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(st_err)?;
        let meta: HashMap<String, String> = self.meta.clone().into_iter().collect();
        canonical_header(safetensors::serialize(views, Some(meta)).map_err(st_err)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(st_err)?;
        let meta: BTreeMap<String, String> = header.metadata().clone().unwrap_or_default().into_iter().collect();
        if meta.get("format").map(String::as_str) != Some(FORMAT_NAME) {
            return Err(Error::Checkpoint("not a synthvsr checkpoint".into()));
        }
        if meta.get("version").map(String::as_str) != Some(FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {:?}",
                meta.get("version")
            )));
        }
        let st = SafeTensors::deserialize(bytes).map_err(st_err)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let shape = view.shape().to_vec();
            let data = view.data();
            let t = match view.dtype() {
                StDtype::F64 => {
                    let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, shape, &Device::Cpu)?
                }
                StDtype::F32 => {
                    let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, shape, &Device::Cpu)?
                }
                other => return Err(Error::Checkpoint(format!("tensor {name} has unsupported dtype {other:?}"))),
            };
            tensors.insert(name, t);
        }
        Ok(Self { meta, tensors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the serialized file contents.
    pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Rewrites the header with sorted metadata keys. safetensors emits the
/// metadata in hash-map order, which differs between processes, so equal
/// checkpoints would otherwise hash differently.
fn canonical_header(mut bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = || Error::Checkpoint("malformed safetensors header".into());
    let n = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().map_err(|_| bad())?) as usize;
    let header = bytes.get(8..8 + n).ok_or_else(bad)?;
    let parsed: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(header)?;
    let mut out = serde_json::Map::new();
    if let Some(serde_json::Value::Object(meta)) = parsed.get("__metadata__") {
        let sorted: BTreeMap<&String, &serde_json::Value> = meta.iter().collect();
        let meta: serde_json::Map<String, serde_json::Value> = sorted.into_iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        out.insert("__metadata__".into(), serde_json::Value::Object(meta));
    }
    let mut tensors: Vec<_> = parsed.into_iter().filter(|(k, _)| k != "__metadata__").collect();
    tensors.sort_by(|a, b| a.0.cmp(&b.0));
    out.extend(tensors);
    let mut text = serde_json::to_vec(&out)?;
    // same content, so never longer than the original; pad with spaces as safetensors does
    if text.len() > n {
        return Err(bad());
    }
    text.resize(n, b' ');
    bytes[8..8 + n].copy_from_slice(&text);
    Ok(bytes)
}

/// Elementwise arithmetic mean of identically-shaped tensor maps.
pub fn average_tensors(maps: &[BTreeMap<String, Tensor>]) -> Result<BTreeMap<String, Tensor>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Checkpoint("nothing to average".into()))?;
    let mut out = BTreeMap::new();
    for (name, t0) in first {
        let mut acc = t0.to_dtype(DType::F64)?;
        for (i, m) in maps.iter().enumerate().skip(1) {
            let t = m
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint {i} lacks tensor {name}")))?;
            if t.dims() != t0.dims() {
                return Err(Error::Shape(format!(
                    "tensor {name}: {:?} vs {:?} in checkpoint {i}",
                    t.dims(),
                    t0.dims()
                )));
            }
            acc = (acc + t.to_dtype(DType::F64)?)?;
        }
        for (i, m) in maps.iter().enumerate().skip(1) {
            if m.len() != first.len() {
                return Err(Error::Checkpoint(format!("checkpoint {i} has a different tensor set")));
            }
        }
        let mean = (acc / maps.len() as f64)?.to_dtype(t0.dtype())?;
        out.insert(name.clone(), mean);
    }
    Ok(out)
}
