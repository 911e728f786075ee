//! Comparison regularizers: inverted dropout at the embedding and
//! label disturbance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("baseline.rate: dropout rate {rate} not in [0, 1)")));
        }
        Ok(DropoutSpec { rate })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbSpec {
    pub flip_prob: f64,
    pub num_classes: usize,
}

impl DisturbSpec {
    pub fn new(flip_prob: f64, num_classes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_prob) {
            return Err(Error::Config(format!(
                "baseline.rate: flip probability {flip_prob} not in [0, 1]"
            )));
        }
        if num_classes < 2 {
            return Err(Error::Config("disturb needs at least 2 classes".into()));
        }
        Ok(DisturbSpec {
            flip_prob,
            num_classes,
        })
    }
}

/// Keep-mask already scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn dropout_forward<R: Rng + ?Sized>(input: &Tensor, rate: f64, training: bool, rng: &mut R) -> Tensor {
    if !training || rate == 0.0 {
        return input.clone();
    }
    let mask = dropout_mask(input.len(), rate, rng);
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same length")
}

/// Dropout recorded on a tape. Identity (no node) outside training or at rate 0.
pub fn dropout_node<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: NodeId,
    rate: f64,
    training: bool,
    rng: Option<&mut R>,
) -> Result<NodeId> {
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let rng = rng.ok_or_else(|| Error::invalid("dropout", "training pass needs an rng"))?;
    let mask = dropout_mask(tape.value(x).len(), rate, rng);
    tape.mask(x, mask)
}

/// With probability `flip_prob` each label is replaced by one of the other
/// `L - 1` classes, chosen uniformly.
pub fn disturb_labels<R: Rng + ?Sized>(labels: &[usize], spec: &DisturbSpec, rng: &mut R) -> Vec<usize> {
    if spec.flip_prob == 0.0 {
        return labels.to_vec();
    }
    labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < spec.flip_prob {
                let r = rng.random_range(0..spec.num_classes - 1);
                if r >= y {
                    r + 1
                } else {
                    r
                }
            } else {
                y
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![4], vec![1., -2., 3., 0.5]).unwrap();
        assert_eq!(dropout_forward(&x, 0.0, true, &mut rng), x);
        assert_eq!(dropout_forward(&x, 0.0, false, &mut rng), x);
        assert_eq!(dropout_forward(&x, 0.7, false, &mut rng), x);
    }

    #[test]
    fn dropout_survivors_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = dropout_forward(&Tensor::full(&[1000], 1.0), 0.25, true, &mut rng);
        assert!(out.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
    }

    #[test]
    fn disturb_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels = vec![0, 1, 1, 0, 1];
        let none = DisturbSpec::new(0.0, 2).unwrap();
        assert_eq!(disturb_labels(&labels, &none, &mut rng), labels);
        let all = DisturbSpec::new(1.0, 2).unwrap();
        assert_eq!(disturb_labels(&labels, &all, &mut rng), vec![1, 0, 0, 1, 0]);
    }

    #[test]
    fn disturb_never_maps_to_self_when_firing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = DisturbSpec::new(1.0, 7).unwrap();
        let labels: Vec<usize> = (0..700).map(|i| i % 7).collect();
        let out = disturb_labels(&labels, &spec, &mut rng);
        assert!(out.iter().zip(&labels).all(|(a, b)| a != b && *a < 7));
    }

    #[test]
    fn specs_validate() {
        assert!(DropoutSpec::new(1.0).is_err());
        assert!(DisturbSpec::new(1.5, 10).is_err());
    }
}
