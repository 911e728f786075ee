//! Phantom-embedding loss.
//!
//! A micro-cluster of `K` same-class instances is embedded, the member
//! embeddings are averaged into a phantom embedding, and the predictor is
//! scored on both the main instance (member 0) and the phantom:
//!
//! ```text
//! total = a * CE(psi(e_0), y) + s * (1 - a) * CE(psi(mean_k e_k), y)
//! ```
//!
//! with `s = +1` (default) or `-1`, and `a ~ Beta(beta_a, beta_b)` drawn once
//! per batch.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CombineSign {
    #[default]
    Plus,
    Minus,
}

impl std::str::FromStr for CombineSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(CombineSign::Plus),
            "minus" => Ok(CombineSign::Minus),
            other => Err(Error::Config(format!(
                "phantom.sign: expected plus or minus, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Members per cluster, main instance included.
    pub k: usize,
    pub beta_a: f64,
    pub beta_b: f64,
    pub sign: CombineSign,
    pub alpha_override: Option<f64>,
    pub aggregator: Aggregator,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            k: 2,
            beta_a: 1.0,
            beta_b: 1.0,
            sign: CombineSign::Plus,
            alpha_override: None,
            aggregator: Aggregator::Mean,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("phantom.k: must be >= 1".into()));
        }
        if !(self.beta_a > 0.0 && self.beta_a.is_finite()) {
            return Err(Error::Config(format!("phantom.beta_a: {} must be > 0", self.beta_a)));
        }
        if !(self.beta_b > 0.0 && self.beta_b.is_finite()) {
            return Err(Error::Config(format!("phantom.beta_b: {} must be > 0", self.beta_b)));
        }
        if let Some(a) = self.alpha_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("phantom.alpha_override: {a} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Node handles and values of one phantom-loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PhantomLossOutput {
    pub total: NodeId,
    pub main_term: NodeId,
    pub phantom_term: NodeId,
    pub alpha: f64,
}

impl PhantomLossOutput {
    pub fn values(&self, tape: &Tape) -> (f64, f64, f64) {
        (
            tape.value(self.total).item(),
            tape.value(self.main_term).item(),
            tape.value(self.phantom_term).item(),
        )
    }
}

/// `[B, K, D] -> [B, D]` mean over cluster members.
pub fn aggregate_embeddings(tape: &mut Tape, member_embeddings: NodeId, aggregator: Aggregator) -> Result<NodeId> {
    match aggregator {
        Aggregator::Mean => tape.mean_axis1(member_embeddings),
    }
}

/// One Beta draw, or the override when set (no draw is consumed then).
pub fn sample_alpha<R: Rng + ?Sized>(config: &PhantomConfig, rng: &mut R) -> Result<f64> {
    if let Some(a) = config.alpha_override {
        return Ok(a);
    }
    let beta = Beta::new(config.beta_a, config.beta_b)
        .map_err(|e| Error::Config(format!("phantom.beta_a/beta_b: {e}")))?;
    Ok(beta.sample(rng))
}

fn check_embeddings(tape: &Tape, emb: NodeId, labels: &[usize]) -> Result<()> {
    let s = tape.shape(emb);
    if s.len() != 3 || s[1] == 0 {
        return Err(Error::invalid(
            "phantom_loss",
            format!("embeddings must be [B, K>=1, D], got {s:?}"),
        ));
    }
    if s[0] != labels.len() {
        return Err(Error::invalid(
            "phantom_loss",
            format!("{} labels for {} clusters", labels.len(), s[0]),
        ));
    }
    Ok(())
}

pub fn phantom_loss<R, F>(
    tape: &mut Tape,
    embeddings: NodeId,
    labels: &[usize],
    mut predictor: F,
    config: &PhantomConfig,
    rng: &mut R,
) -> Result<PhantomLossOutput>
where
    R: Rng + ?Sized,
    F: FnMut(&mut Tape, NodeId) -> Result<NodeId>,
{
    check_embeddings(tape, embeddings, labels)?;
    let alpha = sample_alpha(config, rng)?;

    let main = tape.select_axis1(embeddings, 0)?;
    let main_logits = predictor(tape, main)?;
    let main_term = tape.softmax_cross_entropy(main_logits, labels)?;

    let phantom = aggregate_embeddings(tape, embeddings, config.aggregator)?;
    let phantom_logits = predictor(tape, phantom)?;
    let phantom_term = tape.softmax_cross_entropy(phantom_logits, labels)?;

    let a = tape.scale(main_term, alpha);
    let b = tape.scale(phantom_term, 1.0 - alpha);
    let total = match config.sign {
        CombineSign::Plus => tape.add(a, b)?,
        CombineSign::Minus => tape.sub(a, b)?,
    };
    Ok(PhantomLossOutput {
        total,
        main_term,
        phantom_term,
        alpha,
    })
}

/// Cross-entropy on the phantom embedding alone.
pub fn naive_phantom_loss<F>(
    tape: &mut Tape,
    embeddings: NodeId,
    labels: &[usize],
    mut predictor: F,
    aggregator: Aggregator,
) -> Result<NodeId>
where
    F: FnMut(&mut Tape, NodeId) -> Result<NodeId>,
{
    check_embeddings(tape, embeddings, labels)?;
    let phantom = aggregate_embeddings(tape, embeddings, aggregator)?;
    let logits = predictor(tape, phantom)?;
    tape.softmax_cross_entropy(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn aggregate_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
        let m = aggregate_embeddings(&mut tape, x, Aggregator::Mean).unwrap();
        assert_eq!(tape.value(m).data(), &[2., 3.]);

        let single = Tensor::new(vec![2, 1, 3], vec![0.1, -0.7, 3.3, 1e-9, 5.0, -2.0]).unwrap();
        let x = tape.leaf(single.clone());
        let m = aggregate_embeddings(&mut tape, x, Aggregator::Mean).unwrap();
        assert_eq!(tape.value(m).data(), single.data());
    }

    #[test]
    fn override_alpha() {
        let cfg = PhantomConfig {
            alpha_override: Some(1.0),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_alpha(&cfg, &mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn alpha_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (a, b) in [(1.0, 1.0), (0.2, 0.2), (2.0, 5.0), (50.0, 0.5)] {
            let cfg = PhantomConfig {
                beta_a: a,
                beta_b: b,
                ..Default::default()
            };
            for _ in 0..1000 {
                let v = sample_alpha(&cfg, &mut rng).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(PhantomConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(PhantomConfig { beta_a: 0.0, ..Default::default() }.validate().is_err());
        assert!(PhantomConfig { alpha_override: Some(1.5), ..Default::default() }.validate().is_err());
        assert!(PhantomConfig::default().validate().is_ok());
    }

    #[test]
    fn k_zero_embeddings_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 0, 2]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = phantom_loss(&mut tape, x, &[0], |_, n| Ok(n), &PhantomConfig::default(), &mut rng);
        assert!(r.is_err());
    }
}
