use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

use super::{Batch, IdxImages, TaskError};

/// Sequence length of a flattened 28×28 digit.
pub const PIXELS: usize = 784;

/// Digits read one pixel per step under a fixed permutation, classified
/// from the state after the last pixel.
#[derive(Debug, Clone)]
pub struct Psmnist {
    images: Tensor,
    labels: Vec<u8>,
    perm: Vec<usize>,
}

/// Builds the dataset with a permutation drawn from `perm_seed`.
pub fn make_psmnist(images: &IdxImages, labels: &[u8], perm_seed: u64) -> Result<Psmnist, TaskError> {
    let mut perm: Vec<usize> = (0..images.pixels.cols()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
    Psmnist::with_permutation(images, labels, perm)
}

impl Psmnist {
    pub fn with_permutation(images: &IdxImages, labels: &[u8], perm: Vec<usize>) -> Result<Self, TaskError> {
        let width = images.pixels.cols();
        if width != PIXELS {
            return Err(TaskError::Config(format!("expected {PIXELS} pixels per image, got {width}")));
        }
        if images.count() != labels.len() {
            return Err(TaskError::Config(format!("{} images but {} labels", images.count(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= 10) {
            return Err(TaskError::Config(format!("label {l} outside 0..10")));
        }
        let mut seen = vec![false; width];
        for &p in &perm {
            if p >= width || std::mem::replace(&mut seen[p], true) {
                return Err(TaskError::Config("pixel order is not a permutation".into()));
            }
        }
        if perm.len() != width {
            return Err(TaskError::Config("pixel order is not a permutation".into()));
        }
        Ok(Self { images: images.pixels.clone(), labels: labels.to_vec(), perm })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Pixel sequence of item `i` in presentation order.
    pub fn sequence(&self, i: usize) -> Vec<f64> {
        let row = self.images.row(i);
        self.perm.iter().map(|&p| row[p]).collect()
    }

    /// Batch of items `indices`: scalar inputs over 784 steps, loss on the
    /// final step only.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch, TaskError> {
        let b = indices.len();
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(TaskError::Config(format!("item {i} out of range for {} items", self.len())));
        }
        let mut data = vec![0.0; PIXELS * b];
        for (j, &i) in indices.iter().enumerate() {
            let row = self.images.row(i);
            for (t, &p) in self.perm.iter().enumerate() {
                data[t * b + j] = row[p];
            }
        }
        let mut targets = vec![0; PIXELS * b];
        let mut mask = vec![false; PIXELS * b];
        for (j, &i) in indices.iter().enumerate() {
            targets[(PIXELS - 1) * b + j] = usize::from(self.labels[i]);
            mask[(PIXELS - 1) * b + j] = true;
        }
        Batch::new(Tensor::from_parts(vec![PIXELS, b, 1], data), targets, mask)
    }
}
