//! Minimal reverse-mode differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward
//! value, its inputs and whatever memo the backward rule needs (argmax
//! rows, SVD factors, norms). [`Graph::backward`] walks the nodes in
//! reverse creation order, which is a valid reverse topological order
//! because inputs always exist before the node that consumes them.
//!
//! Only the operations needed by the descriptor network and the
//! closed-form registration layer are provided; there is no implicit
//! broadcasting.

mod adam;
mod gradcheck;
mod ops;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport};

use crate::error::{Error, Result};
use crate::linalg::Svd3;
use crate::scalar::Real;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// 2D tensor from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2D tensor (a 1D tensor counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    MaxOverRows {
        x: Var,
        argmax: Vec<usize>,
    },
    L2NormalizeRows {
        x: Var,
        /// Per-row norm, zero where the fallback row was substituted.
        norms: Vec<T>,
    },
    Exp(Var),
    Neg(Var),
    Scale(Var, T),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar {
        x: Var,
        s: Var,
    },
    DivScalar {
        x: Var,
        s: Var,
    },
    ReduceSum(Var),
    FrobeniusNorm(Var),
    Concat(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Transpose(Var),
    Reshape(Var),
    ScaleRows {
        x: Var,
        w: Var,
    },
    PairwiseSqDist(Var, Var),
    RotateZGroups {
        pts: Var,
        sincos: Var,
        group: usize,
    },
    SvdPart {
        x: Var,
        part: SvdPart,
        factors: Vec<Svd3<T>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SvdPart {
    U,
    S,
    V,
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Counters for numerically degenerate situations met during forward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GraphFlags {
    /// Rows replaced by the fallback unit vector in `l2_normalize_rows`.
    pub degenerate_rows: usize,
    /// SVD instances whose singular-value gaps had to be clamped.
    pub svd_degenerate: usize,
}

/// Recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    flags: GraphFlags,
}

/// Squared singular value gaps below this are clamped in SVD backward.
pub const SVD_GAP_TOL: f64 = 1e-8;
/// Rows with smaller norm are not normalized.
pub const NORMALIZE_MIN_NORM: f64 = 1e-12;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flags: GraphFlags::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn flags(&self) -> GraphFlags {
        self.flags
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Copy of `v`'s current value as a constant (stops gradients).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Back-propagates `d loss / d node` from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = &self.nodes[loss.0].value.shape;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape.clone()));
        }
        self.backward_with(loss, vec![T::one()])
    }

    /// Back-propagates an explicit output gradient `seed` from `out`.
    pub fn backward_with(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.nodes[out.0].value.numel() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed has {} values for output of shape {:?}",
                    seed.len(),
                    self.nodes[out.0].value.shape
                ),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        self.nodes[out.0].grad = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_node(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            None => node.grad = Some(delta),
        }
    }
}

#[cfg(test)]
mod tests;
