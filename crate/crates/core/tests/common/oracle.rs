//! Straight-line two-layer network used as an independent reference for
//! the phantom loss.

use phantom_core::phantom::phantom_loss;
use phantom_core::{NodeId, PhantomConfig, Result, Tape, Tensor};

use super::{rng, uniform};

pub const TOL: f64 = 1e-12;

/// Two-layer network: phi = relu(x W1 + b1), psi = e W2 + b2.
pub struct Net {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Net {
    pub fn new(din: usize, d: usize, l: usize, seed: u64) -> Net {
        let mut r = rng(seed);
        Net {
            w1: uniform(&[din, d], &mut r),
            b1: uniform(&[d], &mut r),
            w2: uniform(&[d, l], &mut r),
            b2: uniform(&[l], &mut r),
        }
    }
}

fn oracle_dense(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (i, o) = (w.shape()[0], w.shape()[1]);
    (0..o)
        .map(|c| {
            let mut acc = b.data()[c];
            for r in 0..i {
                acc += x[r] * w.data()[r * o + c];
            }
            acc
        })
        .collect()
}

fn oracle_ce(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Straight-line main and phantom cross-entropies, no tape involved.
pub fn oracle_terms(net: &Net, x: &[Vec<Vec<f64>>], labels: &[usize]) -> (f64, f64) {
    let (mut main, mut ph) = (0.0, 0.0);
    for (cluster, &y) in x.iter().zip(labels) {
        let embs: Vec<Vec<f64>> = cluster
            .iter()
            .map(|xi| oracle_dense(xi, &net.w1, &net.b1).into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        let d = embs[0].len();
        let mean: Vec<f64> = (0..d).map(|j| embs.iter().map(|e| e[j]).sum::<f64>() / embs.len() as f64).collect();
        main += oracle_ce(&oracle_dense(&embs[0], &net.w2, &net.b2), y);
        ph += oracle_ce(&oracle_dense(&mean, &net.w2, &net.b2), y);
    }
    let b = labels.len() as f64;
    (main / b, ph / b)
}

pub struct Built {
    pub tape: Tape,
    pub x: NodeId,
    pub total: NodeId,
    pub main: NodeId,
    pub phantom: NodeId,
}

pub fn build(net: &Net, x: &[Vec<Vec<f64>>], labels: &[usize], cfg: &PhantomConfig) -> Result<Built> {
    let (b, k, din) = (x.len(), x[0].len(), x[0][0].len());
    let flat: Vec<f64> = x.iter().flatten().flatten().copied().collect();
    let mut tape = Tape::new();
    let xi = tape.param("x", Tensor::new(vec![b * k, din], flat)?);
    let w1 = tape.param("w1", net.w1.clone());
    let b1 = tape.param("b1", net.b1.clone());
    let w2 = tape.param("w2", net.w2.clone());
    let b2 = tape.param("b2", net.b2.clone());
    let h = tape.dense(xi, w1, b1)?;
    let h = tape.relu(h);
    let d = tape.shape(h)[1];
    let emb = tape.reshape(h, vec![b, k, d])?;
    let out = phantom_loss(&mut tape, emb, labels, |t, e| t.dense(e, w2, b2), cfg, &mut rng(0))?;
    Ok(Built {
        tape,
        x: xi,
        total: out.total,
        main: out.main_term,
        phantom: out.phantom_term,
    })
}

pub fn inputs(b: usize, k: usize, din: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let t = uniform(&[b, k, din], &mut rng(seed));
    t.data().chunks(k * din).map(|c| c.chunks(din).map(|r| r.to_vec()).collect()).collect()
}
