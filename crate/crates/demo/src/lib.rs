//! Browser demo: two-moons decision boundaries, alpha histograms and
//! micro-cluster previews. The plain Rust functions do the work; the
//! `#[wasm_bindgen]` wrappers only convert arguments and errors.

use phantom_core::data::{augment, make_synthetic_2d, Generator};
use phantom_core::phantom::sample_alpha;
use phantom_core::sampler::sample_epoch_batches;
use phantom_core::trainer::run_training;
use phantom_core::{Error, Method, PhantomConfig, Preset, Result, Tensor, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Plot window `(x_min, x_max, y_min, y_max)` covering both moons.
pub const EXTENT: (f64, f64, f64, f64) = (-1.5, 2.5, -1.0, 1.5);

const TRAIN_PER_CLASS: usize = 200;
const TEST_PER_CLASS: usize = 500;

#[derive(Clone, Debug)]
pub struct Boundary {
    pub size: usize,
    /// Row-major `size x size` grid of P(class 1), first row at `y_max`.
    pub prob: Vec<f64>,
    /// Training points as flat `x, y` pairs.
    pub points: Vec<f64>,
    pub labels: Vec<u8>,
    pub test_acc: f64,
    pub test_loss: f64,
}

/// Trains mlp2 on a small two-moons set and evaluates it on a grid.
pub fn boundary(method: Method, k: usize, seed: u64, epochs: usize, noise: f64, size: usize) -> Result<Boundary> {
    if !(2..=256).contains(&size) {
        return Err(Error::Config(format!("grid size {size} must be in 2..=256")));
    }
    let train = make_synthetic_2d(Generator::TwoMoons, TRAIN_PER_CLASS, noise, seed)?;
    let test = make_synthetic_2d(Generator::TwoMoons, TEST_PER_CLASS, noise, seed.wrapping_add(1))?;
    let mut cfg = TrainConfig {
        method,
        seed,
        batch_size: 32,
        max_epochs: Some(epochs),
        max_iters: None,
        augment: false,
        ..TrainConfig::default()
    };
    cfg.phantom.k = k;
    let out = run_training(Preset::Mlp2.spec(&[2], 2)?, &train, &test, &cfg)?;

    let (x0, x1, y0, y1) = EXTENT;
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (size - 1) as f64;
    let mut grid = Vec::with_capacity(size * size * 2);
    for r in 0..size {
        for c in 0..size {
            grid.push(step(x0, x1, c));
            grid.push(step(y1, y0, r));
        }
    }
    let grid = Tensor::new(vec![size * size, 2], grid)?;
    let grid = augment(&grid, &out.policy, &mut ChaCha8Rng::seed_from_u64(0))?;
    let logits = out.model.logits(&grid)?;
    let prob = logits
        .data()
        .chunks(2)
        .map(|l| 1.0 / (1.0 + (l[0] - l[1]).exp()))
        .collect();
    let last = out.records.last().expect("training emits at least one record");
    Ok(Boundary {
        size,
        prob,
        points: train.images().data().to_vec(),
        labels: train.labels().iter().map(|&l| l as u8).collect(),
        test_acc: last.test_acc,
        test_loss: last.test_loss,
    })
}

/// Normalized histogram of `draws` alpha samples over `bins` equal bins.
pub fn alpha_histogram(a: f64, b: f64, draws: usize, bins: usize, seed: u64) -> Result<Vec<f64>> {
    if bins == 0 || draws == 0 {
        return Err(Error::Config("bins and draws must be >= 1".into()));
    }
    let cfg = PhantomConfig {
        beta_a: a,
        beta_b: b,
        ..PhantomConfig::default()
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0.0; bins];
    for _ in 0..draws {
        let x = sample_alpha(&cfg, &mut rng)?;
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1.0;
    }
    let scale = bins as f64 / draws as f64;
    Ok(counts.into_iter().map(|c| c * scale).collect())
}

/// First `clusters` micro-clusters of an epoch on two-moons. Each row is
/// `label, x_0, y_0, ..., x_{K-1}, y_{K-1}, mean_x, mean_y`; member 0 is the
/// main instance.
pub fn cluster_preview(k: usize, clusters: usize, seed: u64, noise: f64) -> Result<Vec<f64>> {
    let ds = make_synthetic_2d(Generator::TwoMoons, 100, noise, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = sample_epoch_batches(&ds, k, clusters.max(1), &mut rng)?
        .next()
        .ok_or_else(|| Error::Config("empty epoch".into()))?;
    let mut out = Vec::with_capacity(batch.len() * (2 * k + 3));
    for c in &batch.clusters {
        out.push(c.label as f64);
        let (mut mx, mut my) = (0.0, 0.0);
        for &m in &c.members {
            let p = ds.images().row(m);
            out.extend_from_slice(p);
            mx += p[0];
            my += p[1];
        }
        out.push(mx / k as f64);
        out.push(my / k as f64);
    }
    Ok(out)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct BoundaryView {
    inner: Boundary,
}

#[wasm_bindgen]
impl BoundaryView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.inner.size
    }

    #[wasm_bindgen(getter)]
    pub fn prob(&self) -> Vec<f64> {
        self.inner.prob.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn points(&self) -> Vec<f64> {
        self.inner.points.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn labels(&self) -> Vec<u8> {
        self.inner.labels.clone()
    }

    #[wasm_bindgen(getter, js_name = testAcc)]
    pub fn test_acc(&self) -> f64 {
        self.inner.test_acc
    }

    #[wasm_bindgen(getter, js_name = testLoss)]
    pub fn test_loss(&self) -> f64 {
        self.inner.test_loss
    }
}

#[wasm_bindgen(js_name = extent)]
pub fn extent_js() -> Vec<f64> {
    vec![EXTENT.0, EXTENT.1, EXTENT.2, EXTENT.3]
}

/// `method` is `erm` or `phantom`.
#[wasm_bindgen(js_name = trainBoundary)]
pub fn train_boundary_js(method: &str, k: u32, seed: u32, epochs: u32, noise: f64, size: u32) -> std::result::Result<BoundaryView, JsError> {
    let method: Method = method.parse().map_err(js)?;
    boundary(method, k as usize, seed as u64, epochs as usize, noise, size as usize)
        .map(|inner| BoundaryView { inner })
        .map_err(js)
}

#[wasm_bindgen(js_name = alphaHistogram)]
pub fn alpha_histogram_js(a: f64, b: f64, draws: u32, bins: u32, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    alpha_histogram(a, b, draws as usize, bins as usize, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = clusterPreview)]
pub fn cluster_preview_js(k: u32, clusters: u32, seed: u32, noise: f64) -> std::result::Result<Vec<f64>, JsError> {
    cluster_preview(k as usize, clusters as usize, seed as u64, noise).map_err(js)
}
