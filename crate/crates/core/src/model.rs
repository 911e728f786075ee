//! Layer lists, parameter storage and the split forward pass: the layers
//! before the embedding boundary map inputs to embeddings, the layers
//! after it map embeddings to class logits.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Maxpool2x2,
    Relu,
    Flatten,
    Dropout {
        rate: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Shape of a single instance, e.g. `[2]` or `[1, 28, 28]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// `layers[..embedding_boundary]` produce the embedding.
    pub embedding_boundary: usize,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Mlp2,
    Smallcnn,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp2" => Ok(Preset::Mlp2),
            "smallcnn" => Ok(Preset::Smallcnn),
            other => Err(Error::Config(format!(
                "preset: unknown preset `{other}` (expected mlp2 or smallcnn)"
            ))),
        }
    }
}

impl Preset {
    pub fn spec(self, input_shape: &[usize], num_classes: usize) -> Result<ModelSpec> {
        match self {
            Preset::Mlp2 => ModelSpec::mlp2(input_shape.iter().product(), num_classes),
            Preset::Smallcnn => {
                let &[c, h, w] = input_shape else {
                    return Err(Error::Config(format!(
                        "preset: smallcnn needs image input [c, h, w], got {input_shape:?}"
                    )));
                };
                ModelSpec::smallcnn(c, h, w, num_classes)
            }
        }
    }
}

impl ModelSpec {
    /// Two dense-ReLU layers with 64 units; the embedding is the second.
    pub fn mlp2(in_features: usize, num_classes: usize) -> Result<Self> {
        const D: usize = 64;
        let spec = ModelSpec {
            input_shape: vec![in_features],
            layers: vec![
                LayerSpec::Dense {
                    in_features,
                    out_features: D,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_features: D,
                    out_features: D,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_features: D,
                    out_features: num_classes,
                },
            ],
            embedding_boundary: 4,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two conv-relu-pool stages then a 128-unit dense embedding.
    pub fn smallcnn(channels: usize, h: usize, w: usize, num_classes: usize) -> Result<Self> {
        const D: usize = 128;
        let flat = 16 * (h / 4) * (w / 4);
        let spec = ModelSpec {
            input_shape: vec![channels, h, w],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: channels,
                    out_channels: 8,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Maxpool2x2,
                LayerSpec::Conv2d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Maxpool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: flat,
                    out_features: D,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    in_features: D,
                    out_features: num_classes,
                },
            ],
            embedding_boundary: 9,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Walks the layer list checking shape compatibility. Returns the
    /// embedding dimension.
    pub fn validate(&self) -> Result<usize> {
        let bad = |msg: String| Error::Config(format!("model: {msg}"));
        if self.num_classes < 2 {
            return Err(bad("need at least 2 classes".into()));
        }
        if self.embedding_boundary == 0 || self.embedding_boundary >= self.layers.len() {
            return Err(bad(format!(
                "embedding boundary {} must split the {} layers",
                self.embedding_boundary,
                self.layers.len()
            )));
        }
        let mut shape = self.input_shape.clone();
        let mut embedding_dim = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == self.embedding_boundary {
                if shape.len() != 1 {
                    return Err(bad(format!("embedding must be a vector, got {shape:?}")));
                }
                embedding_dim = shape[0];
            }
            shape = match (layer, shape.as_slice()) {
                (
                    LayerSpec::Dense {
                        in_features,
                        out_features,
                    },
                    [n],
                ) if n == in_features => vec![*out_features],
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        padding,
                    },
                    &[c, h, w],
                ) if c == *in_channels && *kernel >= 1 && *kernel <= h + 2 * padding && *kernel <= w + 2 * padding => {
                    vec![*out_channels, h + 2 * padding - kernel + 1, w + 2 * padding - kernel + 1]
                }
                (LayerSpec::Maxpool2x2, &[c, h, w]) if h % 2 == 0 && w % 2 == 0 => vec![c, h / 2, w / 2],
                (LayerSpec::Relu, s) => s.to_vec(),
                (LayerSpec::Flatten, s) => vec![s.iter().product()],
                (LayerSpec::Dropout { rate }, s) if (0.0..1.0).contains(rate) => s.to_vec(),
                (layer, s) => return Err(bad(format!("layer {i} ({layer:?}) cannot take input {s:?}"))),
            };
        }
        if shape != [self.num_classes] {
            return Err(bad(format!(
                "final output {shape:?} does not match {} classes",
                self.num_classes
            )));
        }
        Ok(embedding_dim)
    }

    pub fn embedding_dim(&self) -> Result<usize> {
        self.validate()
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    out.push((format!("{i}.weight"), vec![*in_features, *out_features]));
                    out.push((format!("{i}.bias"), vec![*out_features]));
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    out.push((format!("{i}.weight"), vec![*out_channels, *in_channels, *kernel, *kernel]));
                    out.push((format!("{i}.bias"), vec![*out_channels]));
                }
                _ => {}
            }
        }
        out
    }
}

/// Whether dropout layers are active, and where they draw masks from.
pub struct Pass<'a, R: Rng + ?Sized> {
    pub training: bool,
    pub rng: Option<&'a mut R>,
}

impl<R: Rng + ?Sized> Pass<'_, R> {
    pub fn inference() -> Self {
        Pass {
            training: false,
            rng: None,
        }
    }
}

/// Tape ids of the model parameters for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<(String, Tensor)>,
}

impl Model {
    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = if shape.len() == 4 {
                        shape[1..].iter().product()
                    } else {
                        shape[0]
                    };
                    let std = (2.0 / fan_in as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n)
                        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                        .collect();
                    Tensor::new(shape, data).expect("shape product matches")
                };
                (name, t)
            })
            .collect();
        Ok(Model { spec, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_parts(spec: ModelSpec, params: Vec<(String, Tensor)>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in expected.iter().zip(&params) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{pname}` {:?} does not match `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|(name, t)| tape.param(name.clone(), t.clone()))
            .collect();
        Bound { ids }
    }

    fn run_layers<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        range: std::ops::Range<usize>,
        mut x: NodeId,
        pass: &mut Pass<'_, R>,
    ) -> Result<NodeId> {
        let mut p = self.spec.layers[..range.start]
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. }))
            .count()
            * 2;
        for layer in &self.spec.layers[range] {
            x = match layer {
                LayerSpec::Dense { .. } => {
                    let out = tape.dense(x, bound.ids[p], bound.ids[p + 1])?;
                    p += 2;
                    out
                }
                LayerSpec::Conv2d { padding, .. } => {
                    let out = tape.conv2d(x, bound.ids[p], bound.ids[p + 1], *padding)?;
                    p += 2;
                    out
                }
                LayerSpec::Maxpool2x2 => tape.maxpool2x2(x)?,
                LayerSpec::Relu => tape.relu(x),
                LayerSpec::Flatten => tape.flatten(x)?,
                LayerSpec::Dropout { rate } => {
                    baselines::dropout_node(tape, x, *rate, pass.training, pass.rng.as_deref_mut())?
                }
            };
        }
        Ok(x)
    }

    /// Inputs `[N, ...input_shape]` to embeddings `[N, D]`.
    pub fn embed<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: NodeId,
        pass: &mut Pass<'_, R>,
    ) -> Result<NodeId> {
        let s = tape.shape(x);
        if s.len() != self.spec.input_shape.len() + 1 || s[1..] != self.spec.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: s.to_vec(),
                right: self.spec.input_shape.clone(),
            });
        }
        self.run_layers(tape, bound, 0..self.spec.embedding_boundary, x, pass)
    }

    /// Embeddings `[N, D]` to logits `[N, L]`.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        embedding: NodeId,
        pass: &mut Pass<'_, R>,
    ) -> Result<NodeId> {
        self.run_layers(
            tape,
            bound,
            self.spec.embedding_boundary..self.spec.layers.len(),
            embedding,
            pass,
        )
    }

    /// Inference-mode logits for a batch of inputs.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let input = tape.leaf(x.clone());
        let mut pass = Pass::<rand_chacha::ChaCha8Rng>::inference();
        let emb = self.embed(&mut tape, &bound, input, &mut pass)?;
        let out = self.predict(&mut tape, &bound, emb, &mut pass)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(ops::argmax_rows(&self.logits(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_validate() {
        assert_eq!(ModelSpec::mlp2(2, 2).unwrap().embedding_dim().unwrap(), 64);
        assert_eq!(ModelSpec::smallcnn(1, 28, 28, 10).unwrap().embedding_dim().unwrap(), 128);
        assert_eq!(ModelSpec::smallcnn(3, 32, 32, 10).unwrap().embedding_dim().unwrap(), 128);
    }

    #[test]
    fn incompatible_layers_rejected() {
        let mut spec = ModelSpec::mlp2(2, 3).unwrap();
        spec.layers[2] = LayerSpec::Dense {
            in_features: 10,
            out_features: 64,
        };
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::mlp2(2, 3).unwrap();
        spec.embedding_boundary = 5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::mlp2(2, 2).unwrap();
        let a = Model::init(spec.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Model::init(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param("4.bias").unwrap().shape(), &[2]);
    }

    #[test]
    fn logits_shape() {
        let spec = ModelSpec::smallcnn(1, 8, 8, 3).unwrap();
        let m = Model::init(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let out = m.logits(&Tensor::full(&[2, 1, 8, 8], 0.1)).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
    }
}
