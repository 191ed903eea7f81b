//! Labeled image datasets: IDX loading, a synthetic generator, partitioning
//! across clients, seed-set sampling and public-set replication.

mod idx;
mod partition;
mod synth;

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use partition::{
    partition, partition_indices, replicate, sample_seed, sample_seed_indices, PartitionConfig,
    PartitionMode,
};
pub use synth::{synth_dataset, SynthSpec};

use crate::error::{Error, Result};
use crate::nn::{Batch, Shape};

/// Images with values in `[0, 1]` and integer labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    shape: Shape,
    images: Vec<f32>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(shape: Shape, images: Vec<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("dataset must contain at least one sample".into()));
        }
        if images.len() != labels.len() * shape.volume() {
            return Err(Error::Dimension(format!(
                "{} pixel values cannot hold {} images of shape {shape}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            shape,
            images,
            labels,
            class_count,
        })
    }

    /// A dataset with no samples, used as an accumulator.
    pub fn empty(shape: Shape, class_count: usize) -> Self {
        Self {
            shape,
            images: Vec::new(),
            labels: Vec::new(),
            class_count,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let v = self.shape.volume();
        &self.images[i * v..(i + 1) * v]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch::new(self.shape, &self.images, &self.labels)
    }

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.class_count];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let v = self.shape.volume();
        let mut images = Vec::with_capacity(indices.len() * v);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self {
            shape: self.shape,
            images,
            labels,
            class_count: self.class_count,
        }
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape || self.class_count != other.class_count {
            return Err(Error::Dimension(format!(
                "cannot concatenate {} / {} classes with {} / {} classes",
                self.shape, self.class_count, other.shape, other.class_count
            )));
        }
        let mut out = self.clone();
        out.images.extend_from_slice(&other.images);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    /// Same images, new labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        Self::new(self.shape, self.images.clone(), labels, self.class_count)
    }

    /// Same samples under a larger label space.
    pub fn with_class_count(mut self, class_count: usize) -> Result<Self> {
        if class_count < self.class_count {
            return Err(Error::Config(format!(
                "cannot shrink label space from {} to {class_count}",
                self.class_count
            )));
        }
        self.class_count = class_count;
        Ok(self)
    }

    pub(crate) fn into_parts(self) -> (Shape, Vec<f32>, Vec<usize>, usize) {
        (self.shape, self.images, self.labels, self.class_count)
    }

    /// Order-sensitive 64-bit fingerprint of shape, pixels and labels.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.shape.channels as u64);
        eat(self.shape.height as u64);
        eat(self.shape.width as u64);
        eat(self.class_count as u64);
        for &p in &self.images {
            eat(u64::from(p.to_bits()));
        }
        for &l in &self.labels {
            eat(l as u64);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_invariants() {
        let s = Shape::flat(2);
        assert!(LabeledDataset::new(s, vec![0.0; 4], vec![0, 1], 2).is_ok());
        assert!(matches!(
            LabeledDataset::new(s, vec![0.0; 4], vec![0, 2], 2),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            LabeledDataset::new(s, vec![0.0; 3], vec![0, 1], 2),
            Err(Error::Dimension(_))
        ));
        assert!(LabeledDataset::new(s, vec![], vec![], 2).is_err());
    }

    #[test]
    fn subset_and_concat() {
        let s = Shape::flat(1);
        let ds = LabeledDataset::new(s, vec![0.1, 0.2, 0.3], vec![0, 1, 0], 2).unwrap();
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.images(), &[0.3, 0.1]);
        assert_eq!(sub.labels(), &[0, 0]);
        let both = sub.concat(&ds).unwrap();
        assert_eq!(both.len(), 5);
        assert_eq!(both.class_histogram(), vec![4, 1]);
        assert_ne!(ds.fingerprint(), sub.fingerprint());
    }
}
