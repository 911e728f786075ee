//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every operation appends a node holding its output value. Nodes can only
//! reference earlier nodes, so the tape is topologically ordered by
//! construction and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, k: NodeId, b: NodeId, padding: usize },
    MaxPool2x2 { x: NodeId, argmax: Vec<usize> },
    Relu { x: NodeId },
    Reshape { x: NodeId },
    /// Elementwise multiply by a fixed mask (dropout).
    Mask { x: NodeId, mask: Vec<f64> },
    /// `[B, K, ...] -> [B, ...]` mean over axis 1.
    MeanAxis1 { x: NodeId, k: usize },
    /// `[B, K, ...] -> [B, ...]` slice at `index` on axis 1.
    SelectAxis1 { x: NodeId, k: usize, index: usize },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Sum { x: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient w.r.t. a named parameter. Parameters registered on the tape
    /// but unreachable from the loss have an all-zero gradient.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    /// Gradient w.r.t. any node, `None` if the node does not reach the loss.
    pub fn wrt(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Trainable parameter registered under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        let id = self.push(Op::Leaf, value);
        self.nodes[id.0].param = Some(name.into());
        id
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::dense_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Dense { x, w, b }, out))
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId, padding: usize) -> Result<NodeId> {
        let out = ops::conv2d_forward(self.value(x), self.value(k), self.value(b), padding)?;
        Ok(self.push(Op::Conv2d { x, k, b, padding }, out))
    }

    pub fn maxpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let (out, argmax) = ops::maxpool2x2_forward(self.value(x))?;
        Ok(self.push(Op::MaxPool2x2 { x, argmax }, out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = ops::relu_forward(self.value(x));
        self.push(Op::Relu { x }, out)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape { x }, out))
    }

    /// Collapses everything after the leading axis.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let shape = vec![s[0], s[1..].iter().product()];
        self.reshape(x, shape)
    }

    pub fn mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let v = self.value(x);
        if mask.len() != v.len() {
            return Err(Error::ShapeMismatch {
                op: "mask",
                left: v.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(Op::Mask { x, mask }, out))
    }

    fn split_axis1(&self, op: &'static str, x: NodeId) -> Result<(usize, usize, usize, Vec<usize>)> {
        let s = self.shape(x);
        if s.len() < 2 || s[1] == 0 {
            return Err(Error::invalid(op, format!("need [B, K>=1, ...], got {s:?}")));
        }
        let inner: usize = s[2..].iter().product();
        let mut out_shape = vec![s[0]];
        out_shape.extend_from_slice(&s[2..]);
        Ok((s[0], s[1], inner, out_shape))
    }

    pub fn mean_axis1(&mut self, x: NodeId) -> Result<NodeId> {
        let (batch, k, inner, shape) = self.split_axis1("mean_axis1", x)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; batch * inner];
        for b in 0..batch {
            let dst = &mut out[b * inner..(b + 1) * inner];
            for m in 0..k {
                let src = &xd[(b * k + m) * inner..(b * k + m + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d /= k as f64;
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(Op::MeanAxis1 { x, k }, out))
    }

    pub fn select_axis1(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let (batch, k, inner, shape) = self.split_axis1("select_axis1", x)?;
        if index >= k {
            return Err(Error::invalid("select_axis1", format!("index {index} >= {k}")));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(batch * inner);
        for b in 0..batch {
            out.extend_from_slice(&xd[(b * k + index) * inner..(b * k + index + 1) * inner]);
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(Op::SelectAxis1 { x, k, index }, out))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    fn binary(&mut self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, out))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| v * c);
        self.push(Op::Scale { x, c }, out)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum { x }, out)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&self.nodes[id], &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let Some(name) = &node.param {
                let t = match g {
                    Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone())?,
                    None => Tensor::zeros(node.value.shape()),
                };
                params.insert(name.clone(), t);
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(&delta) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        }

        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(self.value(*x), self.value(*w), g);
                acc(grads, *x, dx);
                acc(grads, *w, dw);
                acc(grads, *b, db);
            }
            Op::Conv2d { x, k, b, padding } => {
                let (dx, dk, db) =
                    ops::conv2d_backward(self.value(*x), self.value(*k), self.value(*b), *padding, g)?;
                acc(grads, *x, dx);
                acc(grads, *k, dk);
                acc(grads, *b, db);
            }
            Op::MaxPool2x2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
                acc(grads, *x, dx);
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(grads, *x, dx);
            }
            Op::Reshape { x } => acc(grads, *x, g.to_vec()),
            Op::Mask { x, mask } => {
                acc(grads, *x, g.iter().zip(mask).map(|(a, m)| a * m).collect());
            }
            Op::MeanAxis1 { x, k } => {
                let inner = g.len() / self.shape(*x)[0].max(1);
                let batch = self.shape(*x)[0];
                let mut dx = vec![0.0; batch * k * inner];
                for b in 0..batch {
                    for m in 0..*k {
                        for j in 0..inner {
                            dx[(b * k + m) * inner + j] = g[b * inner + j] / *k as f64;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SelectAxis1 { x, k, index } => {
                let batch = self.shape(*x)[0];
                let inner = g.len() / batch.max(1);
                let mut dx = vec![0.0; batch * k * inner];
                for b in 0..batch {
                    dx[(b * k + index) * inner..(b * k + index + 1) * inner]
                        .copy_from_slice(&g[b * inner..(b + 1) * inner]);
                }
                acc(grads, *x, dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (b, &label) in labels.iter().enumerate() {
                    dx[b * classes + label] -= scale;
                }
                acc(grads, *logits, dx);
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.to_vec());
            }
            Op::Sub { a, b } => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(grads, *a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                acc(grads, *b, g.iter().zip(va).map(|(x, y)| x * y).collect());
            }
            Op::Scale { x, c } => acc(grads, *x, g.iter().map(|v| v * c).collect()),
            Op::Sum { x } => acc(grads, *x, vec![g[0]; self.value(*x).len()]),
        }
        Ok(())
    }
}
