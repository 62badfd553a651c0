use rand::seq::SliceRandom;

use super::{Dataset, ImageBatch};
use crate::error::{Error, Result};
use crate::rng;

/// Deterministic shuffled mini-batches: epoch `e` always yields the same order.
#[derive(Clone, Debug)]
pub struct Batcher<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
}

pub fn batcher(dataset: &Dataset, batch_size: usize, seed: u64, drop_last: bool) -> Result<Batcher<'_>> {
    if batch_size == 0 {
        return Err(Error::Validation("batch size must be positive".into()));
    }
    Ok(Batcher { dataset, batch_size, seed, drop_last })
}

impl<'a> Batcher<'a> {
    /// Number of batches per epoch.
    pub fn len(&self) -> usize {
        let n = self.dataset.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Permutation of the dataset used for `epoch`.
    pub fn order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.dataset.len()).collect();
        order.shuffle(&mut rng::rng(self.seed, &[0xba7c, epoch]));
        order
    }

    pub fn epoch(&self, epoch: u64) -> BatchStream<'a> {
        if self.is_empty() {
            log::warn!(
                "{}: {} items with batch size {} and drop_last yields no batches",
                self.dataset.name,
                self.dataset.len(),
                self.batch_size
            );
        }
        BatchStream {
            dataset: self.dataset,
            order: self.order(epoch),
            batch_size: self.batch_size,
            pos: 0,
            batches: self.len(),
        }
    }
}

/// One epoch of batches; each item carries the dataset indices it holds.
#[derive(Debug)]
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    batches: usize,
}

impl Iterator for BatchStream<'_> {
    type Item = (Vec<usize>, ImageBatch);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.batches {
            return None;
        }
        let start = self.pos * self.batch_size;
        let end = (start + self.batch_size).min(self.order.len());
        self.pos += 1;
        let idx = self.order[start..end].to_vec();
        let batch = self.dataset.batch(&idx);
        Some((idx, batch))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.batches - self.pos;
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchStream<'_> {}
