//! Recording tape for reverse-mode differentiation.
//!
//! Every differentiable op appends one node holding its output value and
//! whatever it needs for the backward pass. Nodes are only ever appended,
//! so node order is a topological order and the backward sweep simply walks
//! the list in reverse.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Pad {
        input: Var,
        pad: usize,
    },
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Concat {
        inputs: Vec<Var>,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    MeanSquares {
        input: Var,
    },
    MeanAbs {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

pub struct Tape<T> {
    id: usize,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.node(var).value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.node(var).value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.node(var).requires_grad
    }

    /// Accumulated gradient of a leaf, present after [`Tape::backward`].
    pub fn grad(&self, var: Var) -> Option<&Tensor<T>> {
        self.node(var).grad.as_ref()
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Sign pattern of every input sitting at a kink (LeakyReLU and
    /// absolute-value inputs). Two evaluations with equal patterns lie on
    /// the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let input = match node.op {
                Op::LeakyRelu { input, .. } | Op::MeanAbs { input } => input,
                _ => continue,
            };
            out.extend(self.nodes[input.index].value.data().iter().map(|&v| {
                if v > T::zero() {
                    1
                } else if v < T::zero() {
                    -1
                } else {
                    0
                }
            }));
        }
        out
    }

    pub(crate) fn check(&self, var: Var) -> Result<()> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::DetachedLoss);
        }
        Ok(())
    }

    fn node(&self, var: Var) -> &Node<T> {
        assert_eq!(var.tape, self.id, "variable belongs to a different tape");
        &self.nodes[var.index]
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let var = Var {
            tape: self.id,
            index: self.nodes.len(),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        var
    }

    /// Records a non-leaf node, checking its output for NaN/Inf.
    pub(crate) fn record(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|&v| self.node(v).requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// Propagates d(loss)/d(node) back to every leaf that requires a
    /// gradient. Leaf gradients accumulate across calls until
    /// [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let root = &self.nodes[loss.index];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::DetachedLoss);
        }
        let mut adjoints: Vec<Option<Tensor<T>>> = vec![None; loss.index + 1];
        adjoints[loss.index] = Some(Tensor::full(root.value.shape(), T::one()));

        for index in (0..=loss.index).rev() {
            let Some(adjoint) = adjoints[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                adjoints[index] = Some(adjoint);
                continue;
            }
            for (input, grad) in self.input_grads(&node.op, adjoint) {
                if !self.nodes[input.index].requires_grad {
                    continue;
                }
                match &mut adjoints[input.index] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }

        for (node, adjoint) in self.nodes.iter_mut().zip(adjoints) {
            if let (Op::Leaf, Some(adjoint)) = (&node.op, adjoint) {
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&adjoint),
                    slot => *slot = Some(adjoint),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, op: &Op<T>, grad: Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let wants = |v: Var| self.nodes[v.index].requires_grad;
        match op {
            Op::Leaf => Vec::new(),
            Op::Pad { input, pad } => {
                let shape = self.value(*input).shape();
                vec![(*input, ops::pad::replication_pad2d_backward(&grad, shape, *pad))]
            }
            Op::Conv { input, weight, bias } => {
                let g = ops::conv::conv2d_valid_backward(
                    self.value(*input),
                    self.value(*weight),
                    &grad,
                    wants(*input),
                );
                let mut out = Vec::with_capacity(3);
                if let Some(dx) = g.input {
                    out.push((*input, dx));
                }
                out.push((*weight, g.weight));
                if let Some(b) = bias {
                    out.push((*b, g.bias));
                }
                out
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let g = ops::batch_norm::batch_norm2d_backward(
                    self.value(*input).shape(),
                    self.value(*gamma),
                    xhat,
                    inv_std,
                    &grad,
                    *batch_stats,
                );
                vec![(*input, g.input), (*gamma, g.gamma), (*beta, g.beta)]
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input);
                let dx = x
                    .zip_map(&grad, "leaky_relu", |x, g| {
                        if x >= T::zero() {
                            g
                        } else {
                            g * *slope
                        }
                    })
                    .expect("shape recorded at forward");
                vec![(*input, dx)]
            }
            Op::Dropout { input, mask } => {
                let mut dx = grad;
                for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *g *= m;
                }
                vec![(*input, dx)]
            }
            Op::Concat { inputs } => {
                let widths: Vec<usize> = inputs.iter().map(|&v| self.value(v).shape()[1]).collect();
                let parts = ops::structural::split_channels(&grad, &widths);
                inputs.iter().copied().zip(parts).collect()
            }
            Op::SliceChannels { input, start } => {
                let shape = self.value(*input).shape();
                vec![(*input, ops::structural::embed_channels(&grad, shape, *start))]
            }
            Op::Add { a, b } => vec![(*a, grad.clone()), (*b, grad)],
            Op::Sub { a, b } => {
                let neg = grad.map(|g| -g);
                vec![(*a, grad), (*b, neg)]
            }
            Op::Scale { input, factor } => vec![(*input, grad.map(|g| g * *factor))],
            Op::MeanSquares { input } => {
                let x = self.value(*input);
                let seed = grad.data()[0];
                let k = seed * T::from_f64_lossy(2.0 / x.numel() as f64);
                vec![(*input, x.map(|v| v * k))]
            }
            Op::MeanAbs { input } => {
                let x = self.value(*input);
                let seed = grad.data()[0];
                let k = seed / T::from_usize(x.numel()).expect("numel fits");
                vec![(*input, x.map(|v| sign(v) * k))]
            }
        }
        .into_iter()
        .inspect(|(v, g)| debug_assert_eq!(self.value(*v).shape(), g.shape(), "gradient shape"))
        .collect()
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
