//! Define-by-run tape.
//!
//! Every op appends a node holding its output value and the saved state its
//! backward rule needs. Nodes only reference earlier nodes, so the tape is a
//! DAG in topological order by construction and `backward` is one reverse
//! sweep.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::ops::{conv, elementwise, linear, norm, pool, scan, shape};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Affine(Var, T),
    Unary(Var, elementwise::UnaryKind),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    MaskedFill(Var, Vec<bool>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Pad2d { x: Var, pads: [usize; 4] },
    Conv2d { x: Var, w: Var, b: Option<Var>, cfg: conv::Conv2dCfg },
    CausalConv1d { x: Var, w: Var, b: Option<Var> },
    Linear { x: Var, w: Var, b: Option<Var> },
    LayerNorm { x: Var, g: Var, b: Var, mean: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    L2Normalize { x: Var, norms: Vec<T> },
    Pool { x: Var, kind: pool::PoolKind, argmax: Vec<u32> },
    SelectiveScan { inputs: [Var; 6], states: Vec<T> },
}

/// Recording tape of differentiable tensor operations.
///
/// A graph (and the `Var`s pointing into it) belongs to one thread for the
/// duration of a forward/backward pass.
pub struct Graph<T: Float> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a one-element output.
    ///
    /// Every node that depends on a `requires_grad` leaf receives a gradient;
    /// intermediate gradients are kept so activations can be inspected.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0];
        if out.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = Accum { nodes: &self.nodes, grads: &mut grads };
            self.backward_node(i, &g, &mut acc);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn backward_node(&self, i: usize, g: &[T], acc: &mut Accum<'_, T>) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => elementwise::add_backward(self, *a, *b, g, acc),
            Op::Sub(a, b) => elementwise::sub_backward(self, *a, *b, g, acc),
            Op::Mul(a, b) => elementwise::mul_backward(self, *a, *b, g, acc),
            Op::Scale(x, c) => acc.add_with(*x, |d| {
                for (o, &gi) in d.iter_mut().zip(g) {
                    *o += gi * *c;
                }
            }),
            Op::Affine(x, c) => acc.add_with(*x, |d| {
                for (o, &gi) in d.iter_mut().zip(g) {
                    *o += gi * *c;
                }
            }),
            Op::Unary(x, kind) => elementwise::unary_backward(self, *x, *kind, y, g, acc),
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                acc.add_with(*x, |d| {
                    for ((o, &gi), &v) in d.iter_mut().zip(g).zip(xv) {
                        if v >= *lo && v <= *hi {
                            *o += gi;
                        }
                    }
                })
            }
            Op::Sum(x) => acc.add_with(*x, |d| {
                for o in d.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean(x) => {
                let n = T::c(self.value(*x).numel() as f64);
                acc.add_with(*x, |d| {
                    for o in d.iter_mut() {
                        *o += g[0] / n;
                    }
                })
            }
            Op::MaskedFill(x, mask) => acc.add_with(*x, |d| {
                for ((o, &gi), &m) in d.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *o += gi;
                    }
                }
            }),
            Op::Reshape(x) => acc.add_slice(*x, g),
            Op::Permute(x, order) => shape::permute_backward(self, *x, order, y, g, acc),
            Op::Narrow { x, axis, start } => shape::narrow_backward(self, *x, *axis, *start, y, g, acc),
            Op::Concat { xs, axis } => shape::concat_backward(self, xs, *axis, y, g, acc),
            Op::Pad2d { x, pads } => shape::pad2d_backward(self, *x, *pads, y, g, acc),
            Op::Conv2d { x, w, b, cfg } => conv::conv2d_backward(self, *x, *w, *b, *cfg, y, g, acc),
            Op::CausalConv1d { x, w, b } => conv::causal_conv1d_backward(self, *x, *w, *b, g, acc),
            Op::Linear { x, w, b } => linear::linear_backward(self, *x, *w, *b, g, acc),
            Op::LayerNorm { x, g: gamma, b, mean, rstd } => {
                norm::layer_norm_backward(self, *x, *gamma, *b, mean, rstd, g, acc)
            }
            Op::Softmax(x) => norm::softmax_backward(*x, y, g, acc),
            Op::L2Normalize { x, norms } => norm::l2_normalize_backward(*x, norms, y, g, acc),
            Op::Pool { x, kind, argmax } => pool::pool_backward(self, *x, *kind, argmax, g, acc),
            Op::SelectiveScan { inputs, states } => scan::selective_scan_backward(self, inputs, states, g, acc),
        }
    }
}

/// Gradient accumulator handed to backward rules; skips inputs that do not
/// require gradients.
pub(crate) struct Accum<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut Vec<Option<Vec<T>>>,
}

impl<T: Float> Accum<'_, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Runs `f` on the (zero-initialised) gradient buffer of `v`.
    pub fn add_with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    pub fn add_slice(&mut self, v: Var, g: &[T]) {
        self.add_with(v, |d| {
            for (o, &gi) in d.iter_mut().zip(g) {
                *o += gi;
            }
        });
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of `v`, or `None` when the output does not depend on it
    /// through a differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled when `v` did not contribute.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}
