use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Zero padding on each side before the random crop.
    pub pad: usize,
    pub random_crop: bool,
    pub hflip_prob: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AugmentPolicy {
    pub fn identity(channels: usize) -> Self {
        AugmentPolicy {
            pad: 0,
            random_crop: false,
            hflip_prob: 0.0,
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Pad-4 random crop, horizontal flip with probability 1/2, then
    /// per-channel standardization.
    pub fn standard(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        AugmentPolicy {
            pad: 4,
            random_crop: true,
            hflip_prob: 0.5,
            mean,
            std,
        }
        .validated()
    }

    /// Standardization only (evaluation, flat features).
    pub fn normalize_only(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        AugmentPolicy {
            pad: 0,
            random_crop: false,
            hflip_prob: 0.0,
            mean,
            std,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.mean.len() != self.std.len() {
            return Err(Error::invalid("augment policy", "mean/std length differ"));
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid("augment policy", format!("std {s} must be > 0")));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::invalid("augment policy", "hflip_prob outside [0, 1]"));
        }
        Ok(self)
    }

    pub fn without_randomness(&self) -> Self {
        AugmentPolicy {
            pad: 0,
            random_crop: false,
            hflip_prob: 0.0,
            ..self.clone()
        }
    }
}

/// Applies crop, flip and normalization independently to every instance of
/// `[N, C, H, W]` (or normalization only to `[N, F]`).
pub fn augment<R: Rng + ?Sized>(batch: &Tensor, policy: &AugmentPolicy, rng: &mut R) -> Result<Tensor> {
    let shape = batch.shape().to_vec();
    let channels = shape.get(1).copied().unwrap_or(1);
    if policy.mean.len() != channels {
        return Err(Error::invalid(
            "augment",
            format!("policy has {} channels, batch {shape:?}", policy.mean.len()),
        ));
    }
    let mut out = batch.clone();
    if shape.len() == 4 && (policy.random_crop || policy.hflip_prob > 0.0) {
        let (h, w) = (shape[2], shape[3]);
        let per = channels * h * w;
        let src = batch.data();
        let dst = out.data_mut();
        let span = 2 * policy.pad;
        for i in 0..shape[0] {
            let (oy, ox) = if policy.random_crop {
                (rng.random_range(0..=span), rng.random_range(0..=span))
            } else {
                (policy.pad, policy.pad)
            };
            let flip = policy.hflip_prob > 0.0 && rng.random::<f64>() < policy.hflip_prob;
            for c in 0..channels {
                let base = i * per + c * h * w;
                for y in 0..h {
                    let sy = (y + oy) as isize - policy.pad as isize;
                    for x in 0..w {
                        let cx = if flip { w - 1 - x } else { x };
                        let sx = (cx + ox) as isize - policy.pad as isize;
                        dst[base + y * w + x] = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            src[base + sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
    let plane: usize = shape.iter().skip(2).product();
    for (j, v) in out.data_mut().iter_mut().enumerate() {
        let c = (j / plane) % channels;
        *v = (*v - policy.mean[c]) / policy.std[c];
    }
    Ok(out)
}
