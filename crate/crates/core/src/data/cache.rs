//! Preprocessed dataset cache: magic, JSON header, then little-endian f32
//! pixels, label bytes and partner pixels.

use std::fs;
use std::path::Path;

use accr_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ACCRDS01";

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    split: Split,
    shape: Vec<usize>,
    labels: bool,
    partner: bool,
}

fn push_f32(out: &mut Vec<u8>, t: &Tensor) {
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_cache(path: &Path, dataset: &Dataset) -> Result<()> {
    let header = Header {
        name: dataset.name.clone(),
        split: dataset.split,
        shape: dataset.images().shape().to_vec(),
        labels: dataset.labels().is_some(),
        partner: dataset.paired_partner().is_some(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + dataset.images().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_f32(&mut out, dataset.images());
    if let Some(labels) = dataset.labels() {
        out.extend_from_slice(labels);
    }
    if let Some(p) = dataset.paired_partner() {
        push_f32(&mut out, p);
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            path: self.path.into(),
            reason: format!("truncated at byte {} (wanted {n} more)", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
        Ok(Tensor::new(shape, data)?)
    }
}

pub fn read_cache(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = |reason: String| Error::Format { path: path.into(), reason };
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(format("not a dataset cache (bad magic)".into()));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| format(format!("bad header: {e}")))?;
    if header.shape.len() != 4 {
        return Err(format(format!("image shape {:?} is not rank 4", header.shape)));
    }
    let images = r.tensor(&header.shape)?;
    let labels = if header.labels { Some(r.take(header.shape[0])?.to_vec()) } else { None };
    let partner = if header.partner {
        // partner images share count but not necessarily channels; stored as the same shape
        Some(r.tensor(&header.shape)?)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Dataset::new(header.name, header.split, images, labels, partner)
}
