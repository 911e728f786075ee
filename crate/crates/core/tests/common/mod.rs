#![allow(dead_code)]

pub mod oracle;

use phantom_core::data::LabeledDataset;
use phantom_core::model::Pass;
use phantom_core::{Model, NodeId, Result, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this magnitude a gradient entry is compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap()
}

/// Entries in [-1, 1] kept away from zero, so ReLU kinks are never straddled.
pub fn uniform_off_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..=1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spread over [-1, 1], so every 2x2 window has a clear max.
pub fn distinct(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let data = idx.iter().map(|&i| 2.0 * i as f64 / n.max(1) as f64 - 1.0).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(out * r)` with fixed random weights `r`, turning any node into a
/// scalar with a non-trivial upstream gradient.
pub fn project(tape: &mut Tape, out: NodeId, seed: u64) -> Result<NodeId> {
    let shape = tape.shape(out).to_vec();
    let r = uniform(&shape, &mut rng(seed ^ 0x5eed));
    let r = tape.leaf(r);
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

fn loss_at<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(format!("in{i}"), t.clone()))
        .collect();
    let loss = build(&mut tape, &ids).unwrap();
    tape.value(loss).item()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Largest elementwise relative error between backward and central
/// differences over every entry of every input.
pub fn fd_max_rel_err<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(format!("in{i}"), t.clone()))
        .collect();
    let loss = build(&mut tape, &ids).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let analytic = grads.param(&format!("in{i}")).unwrap().data().to_vec();
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = loss_at(&work, &build);
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = loss_at(&work, &build);
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Labels `0..classes` repeated, with images drawn uniformly in [0, 1].
pub fn fixture(n: usize, classes: usize, sample_shape: &[usize], seed: u64) -> LabeledDataset {
    let mut r = rng(seed);
    let per: usize = sample_shape.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(sample_shape);
    let data = (0..n * per).map(|_| r.random::<f64>()).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    LabeledDataset::new(Tensor::new(shape, data).unwrap(), labels, classes).unwrap()
}

fn model_loss(model: &Model, x: &Tensor, labels: &[usize]) -> (Tape, NodeId) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xi = tape.leaf(x.clone());
    let mut pass = Pass::<ChaCha8Rng>::inference();
    let e = model.embed(&mut tape, &bound, xi, &mut pass).unwrap();
    let y = model.predict(&mut tape, &bound, e, &mut pass).unwrap();
    let loss = tape.softmax_cross_entropy(y, labels).unwrap();
    (tape, loss)
}

/// Finite-difference check of cross-entropy w.r.t. every model parameter.
pub fn model_fd_max_rel_err(model: &Model, x: &Tensor, labels: &[usize]) -> f64 {
    let (tape, loss) = model_loss(model, x, labels);
    let grads = tape.backward(loss).unwrap();
    let mut work = model.clone();
    let mut worst: f64 = 0.0;
    for p in 0..model.params().len() {
        let name = model.params()[p].0.clone();
        let analytic = grads.param(&name).unwrap().data().to_vec();
        for j in 0..analytic.len() {
            let orig = model.params()[p].1.data()[j];
            let mut at = |v: f64| {
                work.params_mut()[p].1.data_mut()[j] = v;
                let (t, l) = model_loss(&work, x, labels);
                t.value(l).item()
            };
            let numeric = (at(orig + FD_STEP) - at(orig - FD_STEP)) / (2.0 * FD_STEP);
            work.params_mut()[p].1.data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// 10 000 instances over 10 classes of unequal size, labels interleaved.
pub fn ten_k() -> LabeledDataset {
    let sizes = [600, 700, 800, 900, 1000, 1000, 1100, 1200, 1300, 1400];
    let sorted: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    let n = sorted.len();
    // 7919 is coprime to n, so this is a permutation that interleaves classes.
    let labels: Vec<usize> = (0..n).map(|i| sorted[(i * 7919) % n]).collect();
    LabeledDataset::new(Tensor::zeros(&[n, 1]), labels, 10).unwrap()
}
