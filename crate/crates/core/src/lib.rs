//! Small-model CPU training with phantom-embedding regularization.
//!
//! Training instances are grouped into same-class micro-clusters; the mean
//! of the members' embeddings (the phantom embedding) is scored by the
//! predictor alongside the main instance. Vanilla ERM, embedding dropout and
//! label disturbance are provided as baselines.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod phantom;
pub mod plot;
pub mod sampler;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{LayerSpec, Model, ModelSpec, Preset};
pub use phantom::{CombineSign, PhantomConfig};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
pub use trainer::{Method, TrainConfig};
