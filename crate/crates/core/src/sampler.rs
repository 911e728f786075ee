//! Homogeneous micro-cluster sampling.
//!
//! Every instance is the main member (index 0) of exactly one cluster per
//! epoch. Its `K - 1` partners come from the same class, drawn uniformly
//! without replacement and never equal to the main instance. Classes with
//! fewer than `K` members fall back to drawing with replacement.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::{augment, AugmentPolicy, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

static SMALL_CLASS_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicroCluster {
    /// `members[0]` is the main instance.
    pub members: Vec<usize>,
    pub label: usize,
}

/// Cluster indices for one training batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterBatch {
    pub clusters: Vec<MicroCluster>,
}

/// A cluster batch with its member images gathered and augmented into
/// `[B, K, ...sample_shape]`.
#[derive(Clone, Debug)]
pub struct MicroClusterBatch {
    pub clusters: Vec<MicroCluster>,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc * (n - k + i) is divisible by i at every step
        acc = acc.checked_mul(n - k + i)? / i;
    }
    Some(acc)
}

/// Total number of distinct homogeneous K-member clusters, `sum_l C(N_l, K)`.
pub fn count_clusters(dataset: &LabeledDataset, k: usize) -> Result<u128> {
    if k == 0 {
        return Err(Error::invalid("count_clusters", "K must be >= 1"));
    }
    let mut total: u128 = 0;
    for (class, n) in dataset.class_sizes().into_iter().enumerate() {
        total = binomial(n as u128, k as u128)
            .and_then(|c| total.checked_add(c))
            .ok_or(Error::ClusterCountOverflow { class })?;
    }
    Ok(total)
}

/// Iterator over one epoch of cluster batches.
pub struct EpochBatches<'a, R: Rng + ?Sized> {
    dataset: &'a LabeledDataset,
    k: usize,
    batch_size: usize,
    order: Vec<usize>,
    slot: Vec<usize>,
    pos: usize,
    rng: &'a mut R,
}

pub fn sample_epoch_batches<'a, R: Rng + ?Sized>(
    dataset: &'a LabeledDataset,
    k: usize,
    batch_size: usize,
    rng: &'a mut R,
) -> Result<EpochBatches<'a, R>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 || batch_size == 0 {
        return Err(Error::invalid("sample_epoch_batches", "K and batch size must be >= 1"));
    }
    let mut slot = vec![0; dataset.len()];
    for class in 0..dataset.num_classes() {
        let members = dataset.class_indices(class);
        for (pos, &i) in members.iter().enumerate() {
            slot[i] = pos;
        }
        if k > 1 && !members.is_empty() && members.len() < k && !SMALL_CLASS_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!(
                "class {class} has {} instances < K={k}; partners drawn with replacement",
                members.len()
            );
        }
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    Ok(EpochBatches {
        dataset,
        k,
        batch_size,
        order,
        slot,
        pos: 0,
        rng,
    })
}

impl<R: Rng + ?Sized> EpochBatches<'_, R> {
    fn cluster_for(&mut self, main: usize) -> MicroCluster {
        let label = self.dataset.labels()[main];
        let class = self.dataset.class_indices(label);
        let n = class.len();
        let me = self.slot[main];
        let mut members = Vec::with_capacity(self.k);
        members.push(main);
        let skip = |j: usize| class[if j < me { j } else { j + 1 }];
        if self.k > 1 {
            if n >= self.k {
                for j in index::sample(self.rng, n - 1, self.k - 1) {
                    members.push(skip(j));
                }
            } else if n > 1 {
                for _ in 1..self.k {
                    members.push(skip(self.rng.random_range(0..n - 1)));
                }
            } else {
                members.resize(self.k, main);
            }
        }
        MicroCluster { members, label }
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<R: Rng + ?Sized> Iterator for EpochBatches<'_, R> {
    type Item = ClusterBatch;

    fn next(&mut self) -> Option<ClusterBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let mains: Vec<usize> = self.order[self.pos..end].to_vec();
        self.pos = end;
        let clusters = mains.into_iter().map(|m| self.cluster_for(m)).collect();
        Some(ClusterBatch { clusters })
    }
}

impl ClusterBatch {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.label).collect()
    }

    pub fn k(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.members.len())
    }

    /// Gathers member images and augments each one with its own draw.
    pub fn materialize<R: Rng + ?Sized>(
        &self,
        dataset: &LabeledDataset,
        policy: &AugmentPolicy,
        rng: &mut R,
    ) -> Result<MicroClusterBatch> {
        let flat: Vec<usize> = self.clusters.iter().flat_map(|c| c.members.iter().copied()).collect();
        let gathered = dataset.images().select_rows(&flat);
        let augmented = augment(&gathered, policy, rng)?;
        let mut shape = vec![self.len(), self.k()];
        shape.extend_from_slice(dataset.sample_shape());
        Ok(MicroClusterBatch {
            clusters: self.clusters.clone(),
            images: augmented.reshape(shape)?,
            labels: self.labels(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ds(labels: Vec<usize>, classes: usize) -> LabeledDataset {
        let n = labels.len();
        let images = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(images, labels, classes).unwrap()
    }

    fn enumerate_pairs(labels: &[usize]) -> u128 {
        let mut count = 0;
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                if labels[i] == labels[j] {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn count_examples() {
        let labels = vec![0, 0, 0, 1, 1];
        let d = ds(labels.clone(), 2);
        assert_eq!(count_clusters(&d, 2).unwrap(), enumerate_pairs(&labels));
        assert_eq!(count_clusters(&d, 2).unwrap(), 4);
        assert_eq!(count_clusters(&d, 1).unwrap(), 5);
        assert_eq!(count_clusters(&ds(vec![0, 1, 1], 2), 2).unwrap(), 1);
        assert!(count_clusters(&d, 0).is_err());
    }

    #[test]
    fn count_overflow_names_class() {
        let mut labels = vec![0; 3];
        labels.extend(vec![1; 400]);
        let d = ds(labels, 2);
        assert!(matches!(count_clusters(&d, 200), Err(Error::ClusterCountOverflow { class: 1 })));
    }

    #[test]
    fn homogeneous_and_distinct() {
        let d = ds(vec![0, 0, 1, 1], 2);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for batch in sample_epoch_batches(&d, 2, 3, &mut rng).unwrap() {
                for c in batch.clusters {
                    assert_eq!(c.members.len(), 2);
                    assert_ne!(c.members[0], c.members[1]);
                    assert!(c.members.iter().all(|&m| d.labels()[m] == c.label));
                }
            }
        }
    }

    #[test]
    fn k1_is_shuffled_pass() {
        let d = ds(vec![0, 1, 0, 1, 2, 2, 2], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batches: Vec<_> = sample_epoch_batches(&d, 1, 3, &mut rng).unwrap().collect();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[2].len(), 1);
        let mut mains: Vec<usize> = batches
            .iter()
            .flat_map(|b| b.clusters.iter().map(|c| {
                assert_eq!(c.members.len(), 1);
                c.members[0]
            }))
            .collect();
        mains.sort();
        assert_eq!(mains, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn small_class_falls_back_to_replacement() {
        let d = ds(vec![0, 1, 1, 1, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for batch in sample_epoch_batches(&d, 3, 8, &mut rng).unwrap() {
            for c in batch.clusters {
                assert_eq!(c.members.len(), 3);
                assert!(c.members.iter().all(|&m| d.labels()[m] == c.label));
            }
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let d = LabeledDataset::new(Tensor::zeros(&[0, 1]), vec![], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_epoch_batches(&d, 2, 4, &mut rng), Err(Error::EmptyDataset)));
    }

    #[test]
    fn materialize_layout() {
        let d = ds(vec![0, 0, 1, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = sample_epoch_batches(&d, 2, 4, &mut rng).unwrap().next().unwrap();
        let m = batch.materialize(&d, &AugmentPolicy::identity(1), &mut rng).unwrap();
        assert_eq!(m.images.shape(), &[4, 2, 1]);
        for (b, c) in m.clusters.iter().enumerate() {
            for (k, &idx) in c.members.iter().enumerate() {
                assert_eq!(m.images.data()[b * 2 + k], idx as f64);
            }
        }
    }
}
