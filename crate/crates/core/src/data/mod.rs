//! Datasets, domain pairs and batching.

mod batch;
mod cache;
mod digits;
mod ingest;
mod synth;

use accr_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batcher, BatchStream, Batcher};
pub use cache::{read_cache, write_cache};
pub use digits::{render_digits, RawDigits};
pub use ingest::{load_mnist_like, preprocess, resize_bilinear, write_idx};
pub use synth::{make_paired_surrogate, synthesize_colored_digits, Background, PALETTE};

/// Rank-4 `[N, C, H, W]` batch of images with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.ndim() != 4 {
            return Err(Error::Shape(format!("image batch must be rank 4, got {:?}", tensor.shape())));
        }
        if !tensor.all_finite() {
            return Err(Error::Numeric("image batch contains NaN or Inf".into()));
        }
        if !tensor.is_empty() && (tensor.min() < -1.0 || tensor.max() > 1.0) {
            return Err(Error::Validation(format!(
                "image values must lie in [-1, 1], found [{}, {}]",
                tensor.min(),
                tensor.max()
            )));
        }
        Ok(Self(tensor))
    }

    /// Clamps into range instead of rejecting.
    pub fn clamped(tensor: Tensor) -> Result<Self> {
        Self::new(tensor.map(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s[1], s[2], s[3])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Images of one domain, optionally with digit labels and aligned partners.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    images: Tensor,
    labels: Option<Vec<u8>>,
    paired_partner: Option<Tensor>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        images: Tensor,
        labels: Option<Vec<u8>>,
        paired_partner: Option<Tensor>,
    ) -> Result<Self> {
        let images = ImageBatch::new(images)?.into_tensor();
        let n = images.shape()[0];
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Validation(format!("{} labels for {n} images", labels.len())));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 9) {
                return Err(Error::Validation(format!("digit label {bad} out of range 0..=9")));
            }
        }
        if let Some(partner) = &paired_partner {
            let partner = ImageBatch::new(partner.clone())?;
            if partner.len() != n {
                return Err(Error::Validation(format!("{} paired partners for {n} images", partner.len())));
            }
        }
        Ok(Self { name: name.into(), split, images, labels, paired_partner })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, H, W)` shared by every image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn paired_partner(&self) -> Option<&Tensor> {
        self.paired_partner.as_ref()
    }

    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let batch = ImageBatch(self.images.take(indices));
        debug_assert!(batch.0.is_empty() || (batch.0.min() >= -1.0 && batch.0.max() <= 1.0));
        batch
    }

    pub fn labels_of(&self, indices: &[usize]) -> Option<Vec<u8>> {
        self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect())
    }

    pub fn partners_of(&self, indices: &[usize]) -> Option<ImageBatch> {
        self.paired_partner.as_ref().map(|p| ImageBatch(p.take(indices)))
    }

    /// Items `indices`, renamed.
    pub fn subset(&self, name: impl Into<String>, split: Split, indices: &[usize]) -> Self {
        Self {
            name: name.into(),
            split,
            images: self.images.take(indices),
            labels: self.labels_of(indices),
            paired_partner: self.paired_partner.as_ref().map(|p| p.take(indices)),
        }
    }

    /// Splits into the first `n_train` items and the rest.
    pub fn split_at(&self, n_train: usize) -> (Self, Self) {
        let n_train = n_train.min(self.len());
        let train: Vec<usize> = (0..n_train).collect();
        let val: Vec<usize> = (n_train..self.len()).collect();
        (self.subset(self.name.clone(), Split::Train, &train), self.subset(self.name.clone(), Split::Val, &val))
    }
}

/// Two domains. Unpaired consumers never rely on index correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source: Dataset,
    pub target: Dataset,
    pub paired: bool,
}

impl DomainPair {
    pub fn unpaired(source: Dataset, target: Dataset) -> Self {
        Self { source, target, paired: false }
    }

    pub fn paired(source: Dataset, target: Dataset) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::Validation(format!(
                "paired domains differ in size: {} vs {}",
                source.len(),
                target.len()
            )));
        }
        Ok(Self { source, target, paired: true })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_out_of_range_pixels() {
        let t = Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.5]).unwrap();
        assert!(matches!(Dataset::new("x", Split::Train, t, None, None), Err(Error::Validation(_))));
    }

    #[test]
    fn dataset_rejects_label_count_mismatch() {
        let t = Tensor::zeros(&[2, 1, 2, 2]);
        assert!(Dataset::new("x", Split::Train, t.clone(), Some(vec![1]), None).is_err());
        assert!(Dataset::new("x", Split::Train, t.clone(), Some(vec![1, 12]), None).is_err());
        assert!(Dataset::new("x", Split::Train, t, Some(vec![1, 2]), None).is_ok());
    }

    #[test]
    fn paired_partner_must_align() {
        let t = Tensor::zeros(&[2, 1, 2, 2]);
        assert!(Dataset::new("x", Split::Train, t.clone(), None, Some(Tensor::zeros(&[3, 1, 2, 2]))).is_err());
        assert!(Dataset::new("x", Split::Train, t, None, Some(Tensor::zeros(&[2, 3, 2, 2]))).is_ok());
    }
}
