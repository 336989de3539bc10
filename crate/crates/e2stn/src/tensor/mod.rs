//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a define-by-run tape: every operation appends a node that
//! stores its output values, the handles of its parents and enough context to
//! compute the local vector-Jacobian product. Construction order is a
//! topological order, so [`Graph::backward`] is a single reverse sweep that
//! visits each node exactly once. Graphs are rebuilt from scratch each step
//! and dropped afterwards.
//!
//! All forward outputs are validated to be finite; a NaN or infinity anywhere
//! is reported as an error rather than silently propagated.

mod grad_check;
mod ops;

pub use grad_check::{central_diff_grad, grad_check, max_rel_error, DEFAULT_FD_EPS};

use crate::array::Array;
use crate::error::{Error, Result};

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor(pub(crate) usize);

/// Convolution flavor for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    /// kernels `[c_out, c_in, kh, kw]`
    Standard,
    /// kernels `[c_in, depth, kh, kw]`; output channel `c * depth + d`
    Depthwise,
    /// 1x1 mixing, kernels `[c_out, c_in, 1, 1]`
    Pointwise,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    ScalarMul(Tensor, f64),
    BiasAdd(Tensor, Tensor),
    ChannelBiasAdd(Tensor, Tensor),
    Matmul(Tensor, Tensor),
    TransposeLastTwo(Tensor),
    Reshape(Tensor),
    Concat { parts: Vec<Tensor>, axis: usize },
    SliceLast { input: Tensor, start: usize, len: usize },
    Relu(Tensor),
    Elu(Tensor),
    SoftmaxRows(Tensor),
    LayerNorm { x: Tensor, gamma: Tensor, beta: Tensor, eps: f64 },
    SumAll(Tensor),
    MeanAll(Tensor),
    VarianceAll(Tensor),
    L2Norm(Tensor),
    ChannelMean(Tensor),
    ChannelVariance(Tensor),
    Conv2d { input: Tensor, kernels: Tensor, kind: ConvKind, padding: (usize, usize) },
    Clamp { input: Tensor, lo: f64, hi: f64 },
    LogEps { input: Tensor, eps: f64 },
    NormalizeRowsL1 { input: Tensor, eps: f64 },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    /// requires_grad, or any ancestor does — gradient propagation stops below
    /// nodes where this is false.
    pub needs_grad: bool,
    pub op: Op,
}

/// Dynamically built computation graph. Single-threaded; one per forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, t: Tensor) -> &Node {
        &self.nodes[t.0]
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.node(t).shape
    }

    pub fn data(&self, t: Tensor) -> &[f64] {
        &self.node(t).data
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, t: Tensor) -> f64 {
        debug_assert_eq!(self.node(t).data.len(), 1);
        self.node(t).data[0]
    }

    /// Gradient of the last backward root with respect to `t`, if any flowed.
    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        self.node(t).grad.as_deref()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.node(t).requires_grad
    }

    pub fn numel(&self, t: Tensor) -> usize {
        self.node(t).data.len()
    }

    fn validate_shape(op: &'static str, shape: &[usize]) -> Result<()> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension {
                op,
                shape: shape.to_vec(),
                msg: "dimensions must be positive".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Tensor> {
        Self::validate_shape(op_name, &shape)?;
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = requires_grad
            || self.parents(&op).iter().any(|p| self.nodes[p.0].needs_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            needs_grad,
            op,
        });
        Ok(Tensor(id))
    }

    fn parents(&self, op: &Op) -> Vec<Tensor> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::BiasAdd(x, b) | Op::ChannelBiasAdd(x, b) => vec![*x, *b],
            Op::ScalarMul(a, _)
            | Op::TransposeLastTwo(a)
            | Op::Reshape(a)
            | Op::Relu(a)
            | Op::Elu(a)
            | Op::SoftmaxRows(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::VarianceAll(a)
            | Op::L2Norm(a)
            | Op::ChannelMean(a)
            | Op::ChannelVariance(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { parts, .. } => parts.clone(),
            Op::SliceLast { input, .. }
            | Op::Clamp { input, .. }
            | Op::LogEps { input, .. }
            | Op::NormalizeRowsL1 { input, .. } => vec![*input],
            Op::Conv2d { input, kernels, .. } => vec![*input, *kernels],
        }
    }

    /// Insert a constant (no gradient tracking).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        self.push("constant", shape, data, Op::Leaf, false)
    }

    /// Insert a trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        self.push("param", shape, data, Op::Leaf, true)
    }

    pub fn constant_from(&mut self, a: &Array) -> Result<Tensor> {
        self.constant(a.shape.clone(), a.data.clone())
    }

    pub fn param_from(&mut self, a: &Array) -> Result<Tensor> {
        self.param(a.shape.clone(), a.data.clone())
    }

    pub fn scalar(&mut self, v: f64) -> Result<Tensor> {
        self.constant(vec![1], vec![v])
    }

    /// Reverse sweep from a scalar root. Gradients accumulate into every node
    /// on a path from a `requires_grad` leaf to the root; repeated calls with
    /// identical inputs produce bit-identical results because nodes are
    /// visited in the fixed reverse construction order.
    pub fn backward(&mut self, root: Tensor) -> Result<()> {
        if self.node(root).data.len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                shape: self.node(root).shape.clone(),
                msg: "backward root must be a scalar".into(),
            });
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            self.backward_op(id, &op);
        }
        Ok(())
    }

    pub(crate) fn accumulate(&mut self, t: Tensor, contrib: &[f64]) {
        if !self.nodes[t.0].needs_grad {
            return;
        }
        let node = &mut self.nodes[t.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => node.grad = Some(contrib.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests;
