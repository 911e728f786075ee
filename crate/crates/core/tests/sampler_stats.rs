mod common;

use common::{rng, ten_k};
use phantom_core::sampler::{count_clusters, sample_epoch_batches};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SIGNIFICANCE: f64 = 0.01;

#[test]
fn full_epoch_k3_on_10k_fixture() {
    let ds = ten_k();
    assert_eq!(ds.len(), 10_000);
    let k = 3;
    let batch = 128;
    let batches: Vec<_> = sample_epoch_batches(&ds, k, batch, &mut rng(2024)).unwrap().collect();

    let n_batches = batches.len();
    for (i, b) in batches.iter().enumerate() {
        if i + 1 < n_batches {
            assert_eq!(b.len(), batch);
        } else {
            assert!(b.len() >= 1 && b.len() <= batch);
        }
    }

    let mut main_seen = vec![0usize; ds.len()];
    let mut partner_count = vec![0u64; ds.len()];
    for c in batches.iter().flat_map(|b| &b.clusters) {
        assert_eq!(c.members.len(), k);
        main_seen[c.members[0]] += 1;
        for &m in &c.members {
            assert_eq!(ds.labels()[m], c.label, "cluster not homogeneous");
        }
        let mut partners = c.members[1..].to_vec();
        assert!(!partners.contains(&c.members[0]));
        partners.sort();
        partners.dedup();
        assert_eq!(partners.len(), k - 1, "partners drawn with replacement");
        for &p in &c.members[1..] {
            partner_count[p] += 1;
        }
    }
    assert!(main_seen.iter().all(|&c| c == 1), "main-instance coverage is not exact");

    for class in 0..ds.num_classes() {
        let members = ds.class_indices(class);
        let observed: Vec<f64> = members.iter().map(|&i| partner_count[i] as f64).collect();
        let total: f64 = observed.iter().sum();
        assert_eq!(total as usize, members.len() * (k - 1));
        let expected = total / members.len() as f64;
        let stat: f64 = observed.iter().map(|o| (o - expected).powi(2) / expected).sum();
        let df = (members.len() - 1) as f64;
        let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
        assert!(p > SIGNIFICANCE, "class {class}: chi-square {stat:.1} on {df} df, p = {p:.4}");
        assert!((stat - df).abs() < 4.0 * (2.0 * df).sqrt(), "class {class}: statistic outside 4 sigma");
    }
}

#[test]
fn main_order_is_a_seeded_permutation() {
    let ds = ten_k();
    let mains = |seed| -> Vec<usize> {
        sample_epoch_batches(&ds, 2, 100, &mut rng(seed))
            .unwrap()
            .flat_map(|b| b.clusters.into_iter().map(|c| c.members[0]))
            .collect()
    };
    let a = mains(1);
    assert_eq!(a, mains(1));
    assert_ne!(a, mains(2));
    assert_ne!(a, (0..ds.len()).collect::<Vec<_>>());
}

#[test]
fn cluster_count_for_fixture() {
    let ds = ten_k();
    assert_eq!(count_clusters(&ds, 1).unwrap(), 10_000);
    let expected: u128 = ds.class_sizes().iter().map(|&n| (n as u128) * (n as u128 - 1) / 2).sum();
    assert_eq!(count_clusters(&ds, 2).unwrap(), expected);
}
