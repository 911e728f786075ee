use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Upper unit semicircle (class 0) interleaved with a shifted lower
    /// semicircle centred at (1, 0.5) (class 1).
    TwoMoons,
    /// Isotropic Gaussians centred at (-2, 0) and (2, 0).
    GaussianBlobs,
}

/// Two-class, two-feature dataset; class 0 occupies the first
/// `n_per_class` rows.
pub fn make_synthetic_2d(generator: Generator, n_per_class: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::invalid("make_synthetic_2d", "n_per_class must be >= 1"));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| Error::invalid("make_synthetic_2d", format!("bad noise std {noise_std}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for _ in 0..n_per_class {
            let (x, y) = match generator {
                Generator::TwoMoons => {
                    let t = rng.random_range(0.0..=std::f64::consts::PI);
                    if class == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    }
                }
                Generator::GaussianBlobs => (if class == 0 { -2.0 } else { 2.0 }, 0.0),
            };
            let (nx, ny) = if noise_std > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            data.push(x + nx);
            data.push(y + ny);
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::new(vec![2 * n_per_class, 2], data)?, labels, 2)
}
