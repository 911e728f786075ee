mod common;

use std::fs;

use common::rng;
use phantom_core::data::{
    augment, load_cifar10, load_idx, make_synthetic_2d, write_cifar10, write_idx, AugmentPolicy, Generator,
    LabeledDataset,
};
use phantom_core::{Error, Tensor};
use rand::Rng;

/// Pixel values that survive 8-bit quantization exactly.
fn quantized(n: usize, shape: &[usize], classes: usize, seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let per: usize = shape.iter().product();
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let data = (0..n * per).map(|_| r.random_range(0..=255u32) as f64 / 255.0).collect();
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    LabeledDataset::new(Tensor::new(full, data).unwrap(), labels, classes).unwrap()
}

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    let ds = quantized(7, &[1, 28, 28], 10, 1);
    write_idx(&ds, &ip, &lp).unwrap();
    let back = load_idx(&ip, &lp).unwrap().with_num_classes(10).unwrap();
    assert_eq!(back.images(), ds.images());
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.sample_shape(), &[1, 28, 28]);
}

#[test]
fn idx_pixel_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
    bytes.extend_from_slice(&[0, 255, 255, 0]);
    fs::write(&ip, bytes).unwrap();
    fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 2, 0, 1]).unwrap();
    let ds = load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.images().data(), &[0.0, 1.0, 1.0, 0.0]);
    assert_eq!(ds.labels(), &[0, 1]);
}

#[test]
fn idx_forced_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    let ds = quantized(2, &[1, 2, 2], 2, 2);
    write_idx(&ds, &ip, &lp).unwrap();

    fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 1]).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::CountMismatch { images: 2, labels: 3 })));

    let mut img = fs::read(&ip).unwrap();
    img.truncate(img.len() - 1);
    fs::write(&ip, &img).unwrap();
    fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 2, 0, 1]).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncated { .. })));

    img[3] = 0x01;
    fs::write(&ip, &img).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::BadMagic { .. })));

    let missing = dir.path().join("nope");
    assert!(matches!(load_idx(&missing, &lp), Err(Error::Io { .. })));
}

#[test]
fn cifar_round_trip_over_several_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = quantized(3, &[3, 32, 32], 10, 3);
    let b = quantized(2, &[3, 32, 32], 10, 4);
    let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    write_cifar10(&a, &pa).unwrap();
    write_cifar10(&b, &pb).unwrap();
    assert_eq!(fs::metadata(&pa).unwrap().len(), 3 * 3073);

    let back = load_cifar10(&[&pa, &pb]).unwrap();
    assert_eq!(back.len(), 5);
    assert_eq!(back.num_classes(), 10);
    assert_eq!(&back.images().data()[..a.images().len()], a.images().data());
    assert_eq!(&back.images().data()[a.images().len()..], b.images().data());
    assert_eq!(&back.labels()[..3], a.labels());
    assert_eq!(&back.labels()[3..], b.labels());
}

#[test]
fn cifar_channel_planar_decoding() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.bin");
    let mut rec = vec![7u8];
    rec.extend(std::iter::repeat_n(255u8, 1024));
    rec.extend(std::iter::repeat_n(0u8, 1024));
    rec.extend(std::iter::repeat_n(51u8, 1024));
    fs::write(&p, &rec).unwrap();
    let ds = load_cifar10(&[&p]).unwrap();
    assert_eq!(ds.labels(), &[7]);
    let d = ds.images().data();
    assert!(d[..1024].iter().all(|&v| v == 1.0));
    assert!(d[1024..2048].iter().all(|&v| v == 0.0));
    assert!(d[2048..].iter().all(|&v| v == 0.2));

    fs::write(&p, &rec[..3072]).unwrap();
    assert!(matches!(load_cifar10(&[&p]), Err(Error::BadRecordLength { .. })));
    rec[0] = 10;
    fs::write(&p, &rec).unwrap();
    assert!(load_cifar10(&[&p]).is_err());
}

#[test]
fn synthetic_examples() {
    let moons = make_synthetic_2d(Generator::TwoMoons, 500, 0.0, 1).unwrap();
    for (i, &l) in moons.labels().iter().enumerate() {
        if l == 0 {
            let p = moons.images().row(i);
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-12);
            assert!(p[1] >= 0.0);
        }
    }
    let a = make_synthetic_2d(Generator::TwoMoons, 100, 0.25, 5).unwrap();
    let b = make_synthetic_2d(Generator::TwoMoons, 100, 0.25, 5).unwrap();
    assert_eq!(a.images(), b.images());
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.num_classes(), 2);

    let blobs = make_synthetic_2d(Generator::GaussianBlobs, 1000, 0.5, 3).unwrap();
    for (class, cx) in [(0, -2.0), (1, 2.0)] {
        let idx = blobs.class_indices(class);
        let mx = idx.iter().map(|&i| blobs.images().row(i)[0]).sum::<f64>() / idx.len() as f64;
        let my = idx.iter().map(|&i| blobs.images().row(i)[1]).sum::<f64>() / idx.len() as f64;
        assert!((mx - cx).abs() < 0.06 && my.abs() < 0.06, "class {class}: ({mx}, {my})");
    }
}

#[test]
fn augment_is_deterministic_given_rng_state() {
    let ds = quantized(4, &[3, 8, 8], 2, 9);
    let policy = AugmentPolicy::standard(vec![0.5; 3], vec![0.25; 3]).unwrap();
    let x = augment(ds.images(), &policy, &mut rng(1)).unwrap();
    let y = augment(ds.images(), &policy, &mut rng(1)).unwrap();
    assert_eq!(x, y);
    assert_eq!(x.shape(), ds.images().shape());
    let z = augment(ds.images(), &policy, &mut rng(2)).unwrap();
    assert_ne!(x, z);
}

#[test]
fn augment_normalizes_per_channel() {
    let x = Tensor::new(vec![1, 2, 1, 2], vec![1.0, 3.0, 10.0, 20.0]).unwrap();
    let policy = AugmentPolicy::normalize_only(vec![2.0, 15.0], vec![1.0, 5.0]).unwrap();
    let y = augment(&x, &policy, &mut rng(0)).unwrap();
    assert_eq!(y.data(), &[-1.0, 1.0, -1.0, 1.0]);
}
