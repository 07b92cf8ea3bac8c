//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! Every operation appends a node holding its output value and whatever
//! the backward rule needs. Node order is a topological order, so
//! `backward` is a single reverse sweep; contributions to shared inputs
//! accumulate additively.

use std::fmt;
use std::sync::Arc;

use crate::error::{IgtError, Result};
use crate::graph::Csr;
use crate::layers::attention::{flash_backward, flash_forward};
use crate::layers::genconv::{aggregate_backward, aggregate_forward};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    Relu,
    Tanh,
    Exp,
    SoftmaxRows,
    Transpose,
    SliceCols,
    ConcatCols,
    Sum,
    CrossEntropy,
    NeighborAggregate,
    FlashAttention,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddBias,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Exp,
        OpKind::SoftmaxRows,
        OpKind::Transpose,
        OpKind::SliceCols,
        OpKind::ConcatCols,
        OpKind::Sum,
        OpKind::CrossEntropy,
        OpKind::NeighborAggregate,
        OpKind::FlashAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddBias => "add_bias",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::Transpose => "transpose",
            OpKind::SliceCols => "slice_cols",
            OpKind::ConcatCols => "concat_cols",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::NeighborAggregate => "neighbor_aggregate",
            OpKind::FlashAttention => "flash_attention",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Tensor<T>,
    },
    NeighborAggregate {
        h: Var,
        adj: Arc<Csr>,
        beta: T,
        eps: T,
    },
    FlashAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        block: usize,
        lse: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Relu(_) => OpKind::Relu,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Exp(_) => OpKind::Exp,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::Transpose(_) => OpKind::Transpose,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::Sum(_) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::NeighborAggregate { .. } => OpKind::NeighborAggregate,
            Op::FlashAttention { .. } => OpKind::FlashAttention,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation and differentiates it. Confined to one thread;
/// independent tapes may run concurrently.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales the backward contribution of every `kind` node by 1.5.
    /// Exists so gradient checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Gradient after [`Tape::backward`]; present iff the node requires grad.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Adds a `1 × cols` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(out, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice_cols(start, len)?;
        Ok(self.push(out, Op::SliceCols { src: a, start }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let out = {
            let vals: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
            Tensor::concat_cols(&vals)?
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// `-log softmax(logits)[label]` for a `1 × C` logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(IgtError::dim("cross_entropy", z.shape(), (1, z.cols())));
        }
        if label >= z.cols() {
            return Err(IgtError::Contract(format!(
                "label {label} out of range for {} classes",
                z.cols()
            )));
        }
        let probs = z.softmax_rows();
        let max = z.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.data().iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        let loss = lse - z.get(0, label);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, label, probs },
            &[logits],
        ))
    }

    /// Per-channel softmax-weighted aggregation of `ReLU(h_v) + eps` over
    /// each node's neighbours with inverse temperature `beta`.
    pub fn neighbor_aggregate(&mut self, h: Var, adj: Arc<Csr>, beta: T, eps: T) -> Result<Var> {
        let hv = self.value(h);
        if hv.rows() != adj.n_nodes() {
            return Err(IgtError::dim(
                "neighbor_aggregate",
                hv.shape(),
                (adj.n_nodes(), hv.cols()),
            ));
        }
        let out = aggregate_forward(hv, &adj, beta, eps);
        Ok(self.push(out, Op::NeighborAggregate { h, adj, beta, eps }, &[h]))
    }

    /// Exact multi-head attention `softmax(QKᵀ/√d_q)V` by streaming over
    /// key/value blocks; heads are contiguous column blocks.
    pub fn flash_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, block: usize) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        if qs != ks || qs != vs {
            return Err(IgtError::dim("flash_attention", qs, if qs != ks { ks } else { vs }));
        }
        if heads == 0 || qs.1 % heads != 0 || block == 0 {
            return Err(IgtError::Config(format!(
                "flash attention needs heads dividing {} and block >= 1",
                qs.1
            )));
        }
        let (out, lse) = flash_forward(self.value(q), self.value(k), self.value(v), heads, block);
        Ok(self.push(
            out,
            Op::FlashAttention {
                q,
                k,
                v,
                heads,
                block,
                lse,
            },
            &[q, k, v],
        ))
    }

    /// Reverse sweep from a `1 × 1` loss. Afterwards every node that
    /// requires grad holds d(loss)/d(node).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(IgtError::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else { continue };
            if self.fault == Some(node.op.kind()) {
                g = g.scale(T::of(1.5));
            }
            self.apply_rule(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                let (r, c) = node.value.shape();
                grads[i] = Some(Tensor::zeros(r, c));
            } else if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn apply_rule(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.matmul_t(val(*b))?);
                }
                if needs(*b) {
                    accumulate(grads, *b, val(*a).t_matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.scale(-T::one()));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.hadamard(val(*b))?);
                }
                if needs(*b) {
                    accumulate(grads, *b, g.hadamard(val(*a))?);
                }
            }
            Op::Scale(a, s) => {
                if needs(*a) {
                    accumulate(grads, *a, g.scale(*s));
                }
            }
            Op::AddBias(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.col_sums());
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                let d = Tensor::from_fn(x.rows(), x.cols(), |r, c| {
                    if x.get(r, c) > T::zero() {
                        g.get(r, c)
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = Tensor::from_fn(out.rows(), out.cols(), |r, c| {
                    let y = out.get(r, c);
                    g.get(r, c) * (T::one() - y * y)
                });
                accumulate(grads, *a, d);
            }
            Op::Exp(a) => accumulate(grads, *a, g.hadamard(out)?),
            Op::SoftmaxRows(a) => {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (dst, (&yi, &gi)) in d.row_mut(r).iter_mut().zip(y.iter().zip(gr)) {
                        *dst = yi * (gi - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::SliceCols { src, start } => {
                let (r, c) = val(*src).shape();
                let mut d = Tensor::zeros(r, c);
                for row in 0..r {
                    d.row_mut(row)[*start..*start + g.cols()].copy_from_slice(g.row(row));
                }
                accumulate(grads, *src, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        accumulate(grads, p, g.slice_cols(start, w)?);
                    }
                    start += w;
                }
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Tensor::full(r, c, g.get(0, 0)));
            }
            Op::CrossEntropy { logits, label, probs } => {
                let mut d = probs.clone();
                let gl = g.get(0, 0);
                let v = d.get(0, *label) - T::one();
                d.set(0, *label, v);
                accumulate(grads, *logits, d.scale(gl));
            }
            Op::NeighborAggregate { h, adj, beta, eps } => {
                let d = aggregate_backward(val(*h), adj, *beta, *eps, out, g);
                accumulate(grads, *h, d);
            }
            Op::FlashAttention {
                q,
                k,
                v,
                heads,
                block,
                lse,
            } => {
                let (dq, dk, dv) = flash_backward(val(*q), val(*k), val(*v), out, g, lse, *heads, *block);
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if needs(var) {
                        accumulate(grads, var, d);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot => *slot = Some(d),
    }
}
