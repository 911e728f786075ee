//! Flat dotted-key JSON run configuration and dataset resolution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Generator, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::Preset;
use crate::phantom::{CombineSign, PhantomConfig};
use crate::trainer::{Method, TrainConfig};

pub const DATA_DIR_ENV: &str = "PHANTOM_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Fashion,
    Cifar10,
    TwoMoons,
    Blobs,
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataKind::Fashion => "fashion",
            DataKind::Cifar10 => "cifar10",
            DataKind::TwoMoons => "two-moons",
            DataKind::Blobs => "blobs",
        })
    }
}

impl std::str::FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("data: unknown dataset `{s}` (fashion, cifar10, two-moons, blobs)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    None,
    Dropout,
    Disturb,
}

/// Everything needed to reproduce a run. Serialized with flat dotted keys,
/// e.g. `"phantom.k": 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub preset: Preset,
    pub method: Method,
    pub seed: u64,
    pub out: PathBuf,

    pub data: DataKind,
    #[serde(rename = "data.dir")]
    pub data_dir: Option<PathBuf>,
    #[serde(rename = "data.train_limit")]
    pub train_limit: Option<usize>,
    #[serde(rename = "data.test_limit")]
    pub test_limit: Option<usize>,
    #[serde(rename = "synthetic.n_per_class")]
    pub n_per_class: usize,
    #[serde(rename = "synthetic.test_n_per_class")]
    pub test_n_per_class: usize,
    #[serde(rename = "synthetic.noise")]
    pub noise: f64,

    #[serde(rename = "train.epochs")]
    pub epochs: Option<usize>,
    #[serde(rename = "train.iters")]
    pub iters: Option<u64>,
    #[serde(rename = "train.batch_size")]
    pub batch_size: usize,
    #[serde(rename = "train.lr0")]
    pub lr0: f64,
    #[serde(rename = "train.lr_decay_iters")]
    pub lr_decay_iters: Vec<u64>,
    #[serde(rename = "train.lr_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(rename = "train.weight_decay")]
    pub weight_decay: f64,
    #[serde(rename = "train.momentum")]
    pub momentum: f64,
    #[serde(rename = "train.eval_every")]
    pub eval_every: usize,
    #[serde(rename = "train.augment")]
    pub augment: bool,
    #[serde(rename = "train.wall_time")]
    pub wall_time: bool,

    #[serde(rename = "phantom.k")]
    pub k: usize,
    #[serde(rename = "phantom.beta_a")]
    pub beta_a: f64,
    #[serde(rename = "phantom.beta_b")]
    pub beta_b: f64,
    #[serde(rename = "phantom.sign")]
    pub sign: CombineSign,
    #[serde(rename = "phantom.alpha_override")]
    pub alpha_override: Option<f64>,

    #[serde(rename = "baseline.method")]
    pub baseline: BaselineMethod,
    #[serde(rename = "baseline.rate")]
    pub baseline_rate: Option<f64>,
}

impl Default for CliConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = PhantomConfig::default();
        CliConfig {
            preset: Preset::Mlp2,
            method: t.method,
            seed: t.seed,
            out: PathBuf::from("runs/latest"),
            data: DataKind::TwoMoons,
            data_dir: None,
            train_limit: None,
            test_limit: None,
            n_per_class: 2000,
            test_n_per_class: 1000,
            noise: 0.25,
            epochs: None,
            iters: t.max_iters,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_decay_iters: t.lr_decay_iters,
            lr_decay_factor: t.lr_decay_factor,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            eval_every: t.eval_every,
            augment: t.augment,
            wall_time: t.wall_time,
            k: p.k,
            beta_a: p.beta_a,
            beta_b: p.beta_b,
            sign: p.sign,
            alpha_override: p.alpha_override,
            baseline: BaselineMethod::None,
            baseline_rate: None,
        }
    }
}

impl CliConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Method after folding in `baseline.method`.
    pub fn resolved_method(&self) -> Result<Method> {
        match (self.baseline, self.method) {
            (BaselineMethod::None, m) => Ok(m),
            (BaselineMethod::Dropout, Method::Erm | Method::Dropout) => Ok(Method::Dropout),
            (BaselineMethod::Disturb, Method::Erm | Method::Disturb) => Ok(Method::Disturb),
            (b, m) => Err(Error::Config(format!(
                "baseline.method: `{b:?}` conflicts with method `{m:?}`"
            ))),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let method = self.resolved_method()?;
        let defaults = TrainConfig::default();
        let cfg = TrainConfig {
            method,
            lr0: self.lr0,
            lr_decay_iters: self.lr_decay_iters.clone(),
            lr_decay_factor: self.lr_decay_factor,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            max_iters: self.iters,
            seed: self.seed,
            eval_every: self.eval_every,
            augment: self.augment,
            phantom: PhantomConfig {
                k: self.k,
                beta_a: self.beta_a,
                beta_b: self.beta_b,
                sign: self.sign,
                alpha_override: self.alpha_override,
                ..PhantomConfig::default()
            },
            dropout_rate: match method {
                Method::Dropout => self.baseline_rate.unwrap_or(defaults.dropout_rate),
                _ => defaults.dropout_rate,
            },
            flip_prob: match method {
                Method::Disturb => self.baseline_rate.unwrap_or(defaults.flip_prob),
                _ => defaults.flip_prob,
            },
            wall_time: self.wall_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills `data.dir` from the environment when absent and checks that
    /// file-backed datasets have an existing directory.
    pub fn resolve_paths(&mut self) -> Result<()> {
        if self.data_dir.is_none() {
            self.data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        }
        if matches!(self.data, DataKind::Fashion | DataKind::Cifar10) {
            match &self.data_dir {
                None => {
                    return Err(Error::Config(format!(
                        "--data-dir (or {DATA_DIR_ENV}) is required for --data {}",
                        self.data
                    )))
                }
                Some(d) if !d.is_dir() => {
                    return Err(Error::Config(format!("--data-dir: {} is not a directory", d.display())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        if self.n_per_class == 0 || self.test_n_per_class == 0 {
            return Err(Error::Config("synthetic.n_per_class: must be >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("synthetic.noise: must be >= 0".into()));
        }
        Ok(())
    }

    /// Loads `(train, test)` for the configured dataset.
    pub fn load_datasets(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let (train, test) = match self.data {
            DataKind::TwoMoons | DataKind::Blobs => {
                let g = if self.data == DataKind::TwoMoons {
                    Generator::TwoMoons
                } else {
                    Generator::GaussianBlobs
                };
                (
                    data::make_synthetic_2d(g, self.n_per_class, self.noise, self.seed)?,
                    data::make_synthetic_2d(g, self.test_n_per_class, self.noise, self.seed.wrapping_add(1_000_003))?,
                )
            }
            DataKind::Fashion => {
                let dir = self.data_dir_checked()?;
                let train = data::load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
                let test = data::load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
                let classes = train.num_classes().max(test.num_classes()).max(10);
                (train.with_num_classes(classes)?, test.with_num_classes(classes)?)
            }
            DataKind::Cifar10 => {
                let mut dir = self.data_dir_checked()?;
                if !dir.join("data_batch_1.bin").exists() && dir.join("cifar-10-batches-bin").is_dir() {
                    dir = dir.join("cifar-10-batches-bin");
                }
                let train_files: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
                (
                    data::load_cifar10(&train_files)?,
                    data::load_cifar10(&[dir.join("test_batch.bin")])?,
                )
            }
        };
        let train = match self.train_limit {
            Some(n) => train.take(n)?,
            None => train,
        };
        let test = match self.test_limit {
            Some(n) => test.take(n)?,
            None => test,
        };
        Ok((train, test))
    }

    fn data_dir_checked(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .ok_or_else(|| Error::Config(format!("--data-dir (or {DATA_DIR_ENV}) is required")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse() {
        let cfg = CliConfig::from_json(r#"{"method": "phantom", "phantom.k": 3, "phantom.sign": "minus", "phantom.alpha_override": 0.25}"#)
            .unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.sign, CombineSign::Minus);
        let t = cfg.train_config().unwrap();
        assert_eq!(t.phantom.alpha_override, Some(0.25));
        assert_eq!(t.method, Method::Phantom);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = CliConfig::from_json(r#"{"phantom.kk": 3}"#).unwrap_err().to_string();
        assert!(err.contains("phantom.kk"), "{err}");
    }

    #[test]
    fn bad_value_names_field() {
        let cfg = CliConfig::from_json(r#"{"phantom.beta_a": -1.0}"#).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("phantom.beta_a"), "{err}");
    }

    #[test]
    fn baseline_method_folds_in() {
        let cfg = CliConfig::from_json(r#"{"baseline.method": "disturb", "baseline.rate": 0.2}"#).unwrap();
        let t = cfg.train_config().unwrap();
        assert_eq!(t.method, Method::Disturb);
        assert_eq!(t.flip_prob, 0.2);
        let cfg = CliConfig::from_json(r#"{"method": "phantom", "baseline.method": "dropout"}"#).unwrap();
        assert!(cfg.train_config().is_err());
    }

    #[test]
    fn resolved_round_trip() {
        let mut cfg = CliConfig::default();
        cfg.alpha_override = Some(0.5);
        cfg.epochs = Some(3);
        cfg.data_dir = Some(PathBuf::from("/tmp/x"));
        let back = CliConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_data_dir_names_flag() {
        let cfg = CliConfig {
            data: DataKind::Cifar10,
            data_dir: Some(PathBuf::from("/definitely/not/here")),
            ..Default::default()
        };
        let mut c = cfg.clone();
        let err = c.resolve_paths().unwrap_err().to_string();
        assert!(err.contains("--data-dir"), "{err}");
    }
}
