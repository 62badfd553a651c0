//! Single-file archives of named arrays plus a JSON manifest.
//!
//! Layout: 8-byte magic, little-endian u64 manifest length, manifest JSON,
//! then each array's elements as little-endian f64 in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use accr_autodiff::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ACCRCK01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

/// Named tensors with free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    arrays: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    /// Adds every parameter under `prefix/`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    /// Overwrites every parameter of `params` from `prefix/<name>`; shapes must match.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet, path: &Path) -> Result<()> {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let key = format!("{prefix}/{}", params.name(id));
            let t = self
                .get(&key)
                .ok_or_else(|| Error::Format { path: path.into(), reason: format!("missing array {key}") })?;
            if t.shape() != params.get(id).shape() {
                return Err(Error::Format {
                    path: path.into(),
                    reason: format!("{key} has shape {:?}, expected {:?}", t.shape(), params.get(id).shape()),
                });
            }
            params.set(id, t.clone());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, t)| Entry { name: n.clone(), shape: t.shape().to_vec(), dtype: "f64".into() })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let body: usize = self.arrays.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format { path: path.into(), reason };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("bad manifest: {e}")))?;
        let mut pos = 16 + len;
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in manifest.arrays {
            if e.dtype != "f64" {
                return Err(bad(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let raw = bytes.get(pos..pos + n * 8).ok_or_else(|| bad(format!("truncated array {}", e.name)))?;
            pos += n * 8;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.push((e.name, Tensor::new(&e.shape, data)?));
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { meta: manifest.meta, arrays })
    }

    /// Writes atomically: a temporary sibling is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
