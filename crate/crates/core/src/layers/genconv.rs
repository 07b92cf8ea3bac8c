//! GENConv: softmax-weighted neighbour aggregation followed by a
//! two-layer update MLP on `h_u + m_u`.
//!
//! No edge features exist, so the message from `v` to `u` is
//! `ReLU(h_v) + eps`. The softmax over neighbours is taken separately per
//! feature channel. Isolated nodes receive `m_u = 0`.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::graph::Csr;
use crate::layers::Linear;
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConvParams<P> {
    pub mlp1: Linear<P>,
    pub mlp2: Linear<P>,
    /// Inverse temperature of the neighbour softmax; a fixed hyper-parameter.
    pub beta: f64,
    pub eps: f64,
}

impl<T: Real> GenConvParams<Tensor<T>> {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        GenConvParams {
            mlp1: Linear::init(d, d, rng),
            mlp2: Linear::init(d, d, rng),
            beta: DEFAULT_BETA,
            eps: DEFAULT_EPSILON,
        }
    }
}

impl<P> GenConvParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GenConvParams<Q> {
        GenConvParams {
            mlp1: self.mlp1.map(f),
            mlp2: self.mlp2.map(f),
            beta: self.beta,
            eps: self.eps,
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        self.mlp1.named(&format!("{prefix}.mlp1"), out);
        self.mlp2.named(&format!("{prefix}.mlp2"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        self.mlp1.named_mut(&format!("{prefix}.mlp1"), out);
        self.mlp2.named_mut(&format!("{prefix}.mlp2"), out);
    }
}

pub fn genconv_forward<T: Real>(tape: &mut Tape<T>, h: Var, adj: &Arc<Csr>, p: &GenConvParams<Var>) -> Result<Var> {
    let m = tape.neighbor_aggregate(h, Arc::clone(adj), T::of(p.beta), T::of(p.eps))?;
    let x = tape.add(h, m)?;
    let z = p.mlp1.forward(tape, x)?;
    let z = tape.relu(z);
    p.mlp2.forward(tape, z)
}

#[inline]
fn message<T: Real>(h: T, eps: T) -> T {
    (if h > T::zero() { h } else { T::zero() }) + eps
}

/// Per-channel running max and softmax denominator of `beta * msg` over
/// the neighbours of one node.
fn channel_stats<T: Real>(h: &Tensor<T>, nbrs: &[usize], beta: T, eps: T, max: &mut [T], den: &mut [T]) {
    max.fill(T::neg_infinity());
    for &v in nbrs {
        for (mx, &x) in max.iter_mut().zip(h.row(v)) {
            *mx = mx.max(beta * message(x, eps));
        }
    }
    den.fill(T::zero());
    for &v in nbrs {
        for ((dn, &mx), &x) in den.iter_mut().zip(max.iter()).zip(h.row(v)) {
            *dn += (beta * message(x, eps) - mx).exp();
        }
    }
}

pub(crate) fn aggregate_forward<T: Real>(h: &Tensor<T>, adj: &Csr, beta: T, eps: T) -> Tensor<T> {
    let (n, d) = h.shape();
    let mut out = Tensor::zeros(n, d);
    let mut max = vec![T::zero(); d];
    let mut den = vec![T::zero(); d];
    for u in 0..n {
        let nbrs = adj.neighbors(u);
        if nbrs.is_empty() {
            continue;
        }
        channel_stats(h, nbrs, beta, eps, &mut max, &mut den);
        let row = out.row_mut(u);
        for &v in nbrs {
            for (c, &x) in h.row(v).iter().enumerate() {
                let m = message(x, eps);
                row[c] += (beta * m - max[c]).exp() * m;
            }
        }
        for (r, &dn) in row.iter_mut().zip(&den) {
            *r /= dn;
        }
    }
    out
}

/// Softmax weights of node `u`'s neighbours, one row per neighbour in
/// adjacency order and one column per channel. Columns sum to one.
pub fn neighbor_weights<T: Real>(h: &Tensor<T>, adj: &Csr, u: usize, beta: T, eps: T) -> Tensor<T> {
    let d = h.cols();
    let nbrs = adj.neighbors(u);
    let mut max = vec![T::zero(); d];
    let mut den = vec![T::zero(); d];
    if nbrs.is_empty() {
        return Tensor::zeros(0, d);
    }
    channel_stats(h, nbrs, beta, eps, &mut max, &mut den);
    Tensor::from_fn(nbrs.len(), d, |i, c| {
        (beta * message(h.get(nbrs[i], c), eps) - max[c]).exp() / den[c]
    })
}

/// With weights `w_v = softmax_v(beta x_v)` and `m = Σ w_v x_v`,
/// `∂m/∂x_v = w_v (1 + beta (x_v - m))`; the ReLU gates the rest.
pub(crate) fn aggregate_backward<T: Real>(
    h: &Tensor<T>,
    adj: &Csr,
    beta: T,
    eps: T,
    out: &Tensor<T>,
    g: &Tensor<T>,
) -> Tensor<T> {
    let (n, d) = h.shape();
    let mut dh = Tensor::zeros(n, d);
    let mut max = vec![T::zero(); d];
    let mut den = vec![T::zero(); d];
    for u in 0..n {
        let nbrs = adj.neighbors(u);
        if nbrs.is_empty() {
            continue;
        }
        channel_stats(h, nbrs, beta, eps, &mut max, &mut den);
        let (mu, gu) = (out.row(u), g.row(u));
        for &v in nbrs {
            for c in 0..d {
                let x = h.get(v, c);
                if x <= T::zero() {
                    continue;
                }
                let m = x + eps;
                let w = (beta * m - max[c]).exp() / den[c];
                let cur = dh.get(v, c);
                dh.set(v, c, cur + gu[c] * w * (T::one() + beta * (m - mu[c])));
            }
        }
    }
    dh
}
