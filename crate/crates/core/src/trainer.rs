//! SGD training loop, step learning-rate schedule and evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, DisturbSpec, DropoutSpec};
use crate::data::{AugmentPolicy, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{RunRecord, Summary};
use crate::model::{Model, ModelSpec, Pass};
use crate::ops;
use crate::phantom::{self, PhantomConfig};
use crate::sampler::sample_epoch_batches;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Loss values above this abort the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
const EVAL_BATCH: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Phantom,
    NaivePhantom,
    Dropout,
    Disturb,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            Error::Config(format!(
                "method: unknown method `{s}` (expected erm, phantom, naive_phantom, dropout or disturb)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub lr0: f64,
    /// Iterations at which the learning rate is divided by `lr_decay_factor`.
    pub lr_decay_iters: Vec<u64>,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: Option<usize>,
    pub max_iters: Option<u64>,
    pub seed: u64,
    /// Evaluate every this many epochs (the final epoch is always evaluated).
    pub eval_every: usize,
    /// Random crop and flip for image data; normalization is always applied.
    pub augment: bool,
    pub phantom: PhantomConfig,
    pub dropout_rate: f64,
    pub flip_prob: f64,
    /// Fill the `wall_seconds` column (makes metrics non-reproducible).
    pub wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Erm,
            lr0: 0.1,
            lr_decay_iters: vec![32_000, 48_000],
            lr_decay_factor: 10.0,
            weight_decay: 0.0005,
            momentum: 0.0,
            batch_size: 128,
            max_epochs: None,
            max_iters: Some(64_000),
            seed: 0,
            eval_every: 1,
            augment: true,
            phantom: PhantomConfig::default(),
            dropout_rate: 0.5,
            flip_prob: 0.1,
            wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0: {} must be > 0", self.lr0));
        }
        if self.lr_decay_iters.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_decay_iters: must be strictly increasing".into());
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor: must be > 0".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay: must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum: must be in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size: must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every: must be >= 1".into());
        }
        if self.max_epochs.is_none() && self.max_iters.is_none() {
            return bad("epochs/iters: one stopping criterion is required".into());
        }
        self.phantom.validate()?;
        DropoutSpec::new(self.dropout_rate)?;
        DisturbSpec::new(self.flip_prob, 2)?;
        Ok(())
    }

    /// Cluster size actually sampled for this method.
    pub fn cluster_k(&self) -> usize {
        match self.method {
            Method::Phantom | Method::NaivePhantom => self.phantom.k,
            _ => 1,
        }
    }
}

/// `lr0 / factor^(number of decay points <= iteration)`.
pub fn lr_at(iteration: u64, config: &TrainConfig) -> f64 {
    let n = config.lr_decay_iters.iter().filter(|&&d| d <= iteration).count();
    config.lr0 / config.lr_decay_factor.powi(n as i32)
}

/// `w <- w - lr * (g + weight_decay * w)` for every parameter.
pub fn sgd_step(params: &mut [(String, Tensor)], grads: &BTreeMap<String, Tensor>, lr: f64, weight_decay: f64) -> Result<()> {
    for (name, w) in params.iter_mut() {
        let g = grads.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
        if g.shape() != w.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: w.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= lr * (gv + weight_decay * *wv);
        }
    }
    Ok(())
}

/// SGD with a heavy-ball buffer; identical to [`sgd_step`] at momentum 0.
#[derive(Debug, Default)]
pub struct Sgd {
    momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut [(String, Tensor)], grads: &BTreeMap<String, Tensor>, lr: f64, wd: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, lr, wd);
        }
        for (name, w) in params.iter_mut() {
            let g = grads.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if g.shape() != w.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: w.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![0.0; w.len()]);
            for ((wv, gv), vv) in w.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv + wd * *wv;
                *wv -= lr * *vv;
            }
        }
        Ok(())
    }
}

/// Independent deterministic random streams of one run.
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub sampler: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub alpha: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub disturb: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        RunRngs {
            init: stream(0),
            sampler: stream(1),
            augment: stream(2),
            alpha: stream(3),
            dropout: stream(4),
            disturb: stream(5),
        }
    }
}

/// Training-set normalization plus crop/flip for image data when enabled.
pub fn train_policy(train: &LabeledDataset, augment: bool) -> Result<AugmentPolicy> {
    let (mean, std) = train.channel_stats();
    let std = std.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    if augment && train.sample_shape().len() == 3 {
        AugmentPolicy::standard(mean, std)
    } else {
        AugmentPolicy::normalize_only(mean, std)
    }
}

/// Mean cross-entropy and argmax accuracy, no augmentation beyond the
/// policy's normalization.
pub fn evaluate(model: &Model, dataset: &LabeledDataset, policy: &AugmentPolicy) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.sample_shape() != model.spec().input_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            left: dataset.sample_shape().to_vec(),
            right: model.spec().input_shape.clone(),
        });
    }
    let policy = policy.without_randomness();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let x = crate::data::augment(&dataset.images().select_rows(chunk), &policy, &mut rng)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
        let logits = model.logits(&x)?;
        let (loss, _) = ops::softmax_cross_entropy(&logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        correct += ops::argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Values of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub main: Option<f64>,
    pub phantom: Option<f64>,
    pub alpha: Option<f64>,
}

/// Forward/backward for one micro-cluster batch of shape `[B, K, ...]`.
/// Returns the loss values and parameter gradients.
pub fn batch_gradients(
    model: &Model,
    images: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
    rngs: &mut RunRngs,
) -> Result<(StepLosses, BTreeMap<String, Tensor>)> {
    let s = images.shape();
    let (b, k) = (s[0], s[1]);
    let mut flat_shape = vec![b * k];
    flat_shape.extend_from_slice(&s[2..]);

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x = tape.leaf(images.clone().reshape(flat_shape)?);
    let mut pass = Pass {
        training: true,
        rng: Some(&mut rngs.dropout),
    };
    let emb = model.embed(&mut tape, &bound, x, &mut pass)?;

    let (loss, losses) = match config.method {
        Method::Erm | Method::Dropout | Method::Disturb => {
            let emb = if config.method == Method::Dropout {
                baselines::dropout_node(&mut tape, emb, config.dropout_rate, true, pass.rng.as_deref_mut())?
            } else {
                emb
            };
            let labels = if config.method == Method::Disturb {
                let spec = DisturbSpec::new(config.flip_prob, model.spec().num_classes)?;
                baselines::disturb_labels(labels, &spec, &mut rngs.disturb)
            } else {
                labels.to_vec()
            };
            let logits = model.predict(&mut tape, &bound, emb, &mut pass)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let v = tape.value(loss).item();
            (
                loss,
                StepLosses {
                    total: v,
                    main: None,
                    phantom: None,
                    alpha: None,
                },
            )
        }
        Method::Phantom | Method::NaivePhantom => {
            let d = tape.shape(emb)[1];
            let emb = tape.reshape(emb, vec![b, k, d])?;
            let predictor = |t: &mut Tape, e| model.predict(t, &bound, e, &mut pass);
            if config.method == Method::Phantom {
                let out = phantom::phantom_loss(&mut tape, emb, labels, predictor, &config.phantom, &mut rngs.alpha)?;
                let (total, main, ph) = out.values(&tape);
                (
                    out.total,
                    StepLosses {
                        total,
                        main: Some(main),
                        phantom: Some(ph),
                        alpha: Some(out.alpha),
                    },
                )
            } else {
                let loss = phantom::naive_phantom_loss(&mut tape, emb, labels, predictor, config.phantom.aggregator)?;
                let v = tape.value(loss).item();
                (
                    loss,
                    StepLosses {
                        total: v,
                        main: None,
                        phantom: Some(v),
                        alpha: None,
                    },
                )
            }
        }
    };
    let grads = tape.backward(loss)?;
    Ok((losses, grads.into_params()))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
    pub policy: AugmentPolicy,
}

#[derive(Default)]
struct EpochAcc {
    n: usize,
    total: f64,
    main: f64,
    phantom: f64,
    alpha: f64,
    has_main: bool,
    has_phantom: bool,
    has_alpha: bool,
}

impl EpochAcc {
    fn push(&mut self, s: &StepLosses) {
        self.n += 1;
        self.total += s.total;
        if let Some(v) = s.main {
            self.main += v;
            self.has_main = true;
        }
        if let Some(v) = s.phantom {
            self.phantom += v;
            self.has_phantom = true;
        }
        if let Some(v) = s.alpha {
            self.alpha += v;
            self.has_alpha = true;
        }
    }

    fn mean(&self, v: f64, present: bool) -> Option<f64> {
        (present && self.n > 0).then(|| v / self.n as f64)
    }
}

/// Hook called after every optimizer step with the iteration index and the
/// updated model.
pub type StepHook<'a> = &'a mut dyn FnMut(u64, &Model, &StepLosses);

pub fn run_training(spec: ModelSpec, train: &LabeledDataset, test: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    run_training_with_hook(spec, train, test, config, &mut |_, _, _| {})
}

pub fn run_training_with_hook(
    spec: ModelSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    config: &TrainConfig,
    hook: StepHook<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.num_classes() < 2 {
        return Err(Error::Config("dataset: need at least 2 classes".into()));
    }
    if spec.num_classes != train.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset {}",
            spec.num_classes,
            train.num_classes()
        )));
    }
    let started = Instant::now();
    let mut rngs = RunRngs::new(config.seed);
    let mut model = Model::init(spec, &mut rngs.init)?;
    let policy = train_policy(train, config.augment)?;
    let mut sgd = Sgd::new(config.momentum);
    let k = config.cluster_k();

    let mut records = Vec::new();
    let mut iteration: u64 = 0;
    let mut epoch = 0usize;
    let mut lr = lr_at(0, config);
    'outer: loop {
        if config.max_epochs.is_some_and(|m| epoch >= m) || config.max_iters.is_some_and(|m| iteration >= m) {
            break;
        }
        epoch += 1;
        let mut acc = EpochAcc::default();
        let batches: Vec<_> = sample_epoch_batches(train, k, config.batch_size, &mut rngs.sampler)?.collect();
        let mut stopped_early = false;
        for batch in batches {
            if config.max_iters.is_some_and(|m| iteration >= m) {
                stopped_early = true;
                break;
            }
            let mb = batch.materialize(train, &policy, &mut rngs.augment)?;
            let (losses, grads) = batch_gradients(&model, &mb.images, &mb.labels, config, &mut rngs)?;
            if !losses.total.is_finite() || losses.total.abs() > DIVERGENCE_THRESHOLD {
                return Err(Error::Diverged {
                    iteration,
                    loss: losses.total,
                });
            }
            lr = lr_at(iteration, config);
            sgd.step(model.params_mut(), &grads, lr, config.weight_decay)?;
            acc.push(&losses);
            hook(iteration, &model, &losses);
            iteration += 1;
        }
        let last_epoch = stopped_early
            || config.max_epochs.is_some_and(|m| epoch >= m)
            || config.max_iters.is_some_and(|m| iteration >= m);
        if epoch.is_multiple_of(config.eval_every) || last_epoch {
            let (test_loss, test_acc) = evaluate(&model, test, &policy)?;
            records.push(RunRecord {
                epoch,
                iteration,
                train_loss: acc.mean(acc.total, true).unwrap_or(f64::NAN),
                main_loss: acc.mean(acc.main, acc.has_main),
                phantom_loss: acc.mean(acc.phantom, acc.has_phantom),
                test_loss,
                test_acc,
                lr,
                alpha_mean: acc.mean(acc.alpha, acc.has_alpha),
                wall_seconds: config.wall_time.then(|| started.elapsed().as_secs_f64()),
            });
        }
        if last_epoch {
            break 'outer;
        }
    }
    let summary = Summary::from_records(&records).ok_or_else(|| Error::Config("run produced no records".into()))?;
    Ok(TrainOutcome {
        model,
        records,
        summary,
        policy,
    })
}
