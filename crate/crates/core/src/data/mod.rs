//! Labeled datasets, file-format loaders and the augmentation pipeline.

mod augment;
mod cifar;
mod idx;
mod synthetic;

pub use augment::{augment, AugmentPolicy};
pub use cifar::{load_cifar10, write_cifar10, CIFAR_RECORD_LEN};
pub use idx::{load_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synthetic::{make_synthetic_2d, Generator};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images (or feature vectors) with integer labels and a per-class index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().is_empty() || images.shape()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: images.shape().first().copied().unwrap_or(0),
                labels: labels.len(),
            });
        }
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
            by_class[y].push(i);
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape of one instance.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Indices of every instance of `class`.
    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(self.images.select_rows(indices), labels, self.num_classes)
    }

    /// Same data with a larger class count (e.g. a subset missing a class).
    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        LabeledDataset::new(self.images, self.labels, num_classes)
    }

    /// First `n` instances (or all, if fewer).
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Per-channel mean and population standard deviation. Channels are
    /// axis 1 (image channels, or features for flat inputs).
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let shape = self.images.shape();
        let n = shape[0];
        let channels = shape.get(1).copied().unwrap_or(1);
        let plane: usize = shape.iter().skip(2).product();
        let count = (n * plane) as f64;
        let data = self.images.data();
        let mut mean = vec![0.0; channels];
        for i in 0..n {
            for (c, m) in mean.iter_mut().enumerate() {
                let start = (i * channels + c) * plane;
                *m += data[start..start + plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; channels];
        for i in 0..n {
            for c in 0..channels {
                let start = (i * channels + c) * plane;
                var[c] += data[start..start + plane]
                    .iter()
                    .map(|v| (v - mean[c]) * (v - mean[c]))
                    .sum::<f64>();
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        (mean, std)
    }
}
