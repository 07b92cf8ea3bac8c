//! Global multi-head self-attention, `softmax(Q Kᵀ / √d_q) V`, with two
//! kernels: a naive one that materialises every N×N weight matrix, and a
//! tiled one that streams key/value blocks with an online softmax
//! (running max `m`, running normaliser `l`, rescaled accumulator) and
//! never holds more than one block×block tile of scores.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{IgtError, Result};
use crate::layers::xavier_uniform;
use crate::real::Real;
use crate::tensor::{gemm_into, softmax_in_place, MatView, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<P> {
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
    pub w_o: P,
    pub n_heads: usize,
}

impl<T: Real> AttentionParams<Tensor<T>> {
    pub fn init(d: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(IgtError::Config(format!(
                "model width {d} is not divisible by {n_heads} heads"
            )));
        }
        Ok(AttentionParams {
            w_q: xavier_uniform(d, d, rng),
            w_k: xavier_uniform(d, d, rng),
            w_v: xavier_uniform(d, d, rng),
            w_o: xavier_uniform(d, d, rng),
            n_heads,
        })
    }
}

impl<P> AttentionParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> AttentionParams<Q> {
        AttentionParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
            n_heads: self.n_heads,
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        out.push((format!("{prefix}.w_q"), &self.w_q));
        out.push((format!("{prefix}.w_k"), &self.w_k));
        out.push((format!("{prefix}.w_v"), &self.w_v));
        out.push((format!("{prefix}.w_o"), &self.w_o));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        out.push((format!("{prefix}.w_q"), &mut self.w_q));
        out.push((format!("{prefix}.w_k"), &mut self.w_k));
        out.push((format!("{prefix}.w_v"), &mut self.w_v));
        out.push((format!("{prefix}.w_o"), &mut self.w_o));
    }
}

fn project_qkv<T: Real>(tape: &mut Tape<T>, h: Var, p: &AttentionParams<Var>) -> Result<(Var, Var, Var)> {
    Ok((tape.matmul(h, p.w_q)?, tape.matmul(h, p.w_k)?, tape.matmul(h, p.w_v)?))
}

/// Attention built from tape primitives; each head's N×N weights live on
/// the tape.
pub fn attention_naive<T: Real>(tape: &mut Tape<T>, h: Var, p: &AttentionParams<Var>) -> Result<Var> {
    let (q, k, v) = project_qkv(tape, h, p)?;
    let d = tape.value(q).cols();
    let dq = d / p.n_heads;
    let scale = T::one() / T::of(dq as f64).sqrt();
    let mut heads = Vec::with_capacity(p.n_heads);
    for head in 0..p.n_heads {
        let qh = tape.slice_cols(q, head * dq, dq)?;
        let kh = tape.slice_cols(k, head * dq, dq)?;
        let vh = tape.slice_cols(v, head * dq, dq)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        heads.push(tape.matmul(weights, vh)?);
    }
    let cat = tape.concat_cols(&heads)?;
    tape.matmul(cat, p.w_o)
}

/// Attention through the fused streaming kernel.
pub fn attention_tiled<T: Real>(tape: &mut Tape<T>, h: Var, p: &AttentionParams<Var>, block: usize) -> Result<Var> {
    let (q, k, v) = project_qkv(tape, h, p)?;
    let core = tape.flash_attention(q, k, v, p.n_heads, block)?;
    tape.matmul(core, p.w_o)
}

fn check_params<T: Real>(h: &Tensor<T>, p: &AttentionParams<Tensor<T>>) -> Result<()> {
    let d = h.cols();
    for w in [&p.w_q, &p.w_k, &p.w_v, &p.w_o] {
        if w.shape() != (d, d) {
            return Err(IgtError::dim("attention", h.shape(), w.shape()));
        }
    }
    if p.n_heads == 0 || !d.is_multiple_of(p.n_heads) {
        return Err(IgtError::Config(format!(
            "{d} columns not divisible by {} heads",
            p.n_heads
        )));
    }
    Ok(())
}

/// Grad-free naive attention; one N×N buffer reused across heads.
pub fn attention_naive_values<T: Real>(h: &Tensor<T>, p: &AttentionParams<Tensor<T>>) -> Result<Tensor<T>> {
    check_params(h, p)?;
    let (q, k, v) = (h.matmul(&p.w_q)?, h.matmul(&p.w_k)?, h.matmul(&p.w_v)?);
    let core = naive_core(&q, &k, &v, p.n_heads);
    core.matmul(&p.w_o)
}

/// Grad-free tiled attention.
pub fn attention_tiled_values<T: Real>(
    h: &Tensor<T>,
    p: &AttentionParams<Tensor<T>>,
    block: usize,
) -> Result<Tensor<T>> {
    check_params(h, p)?;
    if block == 0 {
        return Err(IgtError::Config("tile size must be >= 1".into()));
    }
    let (q, k, v) = (h.matmul(&p.w_q)?, h.matmul(&p.w_k)?, h.matmul(&p.w_v)?);
    let (core, _) = flash_forward(&q, &k, &v, p.n_heads, block);
    core.matmul(&p.w_o)
}

/// Per-head attention weight matrices from the naive kernel.
pub fn attention_weights<T: Real>(h: &Tensor<T>, p: &AttentionParams<Tensor<T>>) -> Result<Vec<Tensor<T>>> {
    check_params(h, p)?;
    let (q, k) = (h.matmul(&p.w_q)?, h.matmul(&p.w_k)?);
    let dq = h.cols() / p.n_heads;
    let scale = T::one() / T::of(dq as f64).sqrt();
    Ok((0..p.n_heads)
        .map(|head| {
            let mut s = Tensor::zeros(h.rows(), h.rows());
            let n = h.rows();
            gemm_into(
                scale,
                MatView::col_block(&q, head * dq, dq),
                MatView::col_block(&k, head * dq, dq).t(),
                T::zero(),
                s.data_mut(),
                0,
                n,
            );
            s.softmax_rows()
        })
        .collect())
}

/// Elements of the weight buffer the naive kernel materialises.
pub fn naive_weight_elements(n: usize) -> usize {
    n * n
}

/// Peak auxiliary elements of the tiled kernel: one score tile, one
/// output accumulator tile and the running max/normaliser vectors.
pub fn tiled_aux_elements(n: usize, d: usize, heads: usize, block: usize) -> usize {
    let b = block.min(n).max(1);
    let dq = d / heads;
    b * b + b * dq + 2 * b
}

pub(crate) fn naive_core<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Tensor<T> {
    let (n, d) = q.shape();
    let dq = d / heads;
    let scale = T::one() / T::of(dq as f64).sqrt();
    let mut out = Tensor::zeros(n, d);
    let mut s = vec![T::zero(); n * n];
    for head in 0..heads {
        gemm_into(
            scale,
            MatView::col_block(q, head * dq, dq),
            MatView::col_block(k, head * dq, dq).t(),
            T::zero(),
            &mut s,
            0,
            n,
        );
        for row in s.chunks_mut(n) {
            softmax_in_place(row);
        }
        let sv = MatView {
            data: &s,
            offset: 0,
            rows: n,
            cols: n,
            rs: n,
            cs: 1,
        };
        gemm_into(
            T::one(),
            sv,
            MatView::col_block(v, head * dq, dq),
            T::zero(),
            out.data_mut(),
            head * dq,
            d,
        );
    }
    out
}

/// Streaming attention over the concatenated heads of `q`, `k`, `v`.
/// Returns the output and each row's log-sum-exp (head-major), which the
/// backward pass uses to rebuild weight tiles.
pub(crate) fn flash_forward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    block: usize,
) -> (Tensor<T>, Vec<T>) {
    let (n, d) = q.shape();
    let dq = d / heads;
    let scale = T::one() / T::of(dq as f64).sqrt();
    let bs = block.min(n).max(1);
    let mut out = Tensor::zeros(n, d);
    let mut lse = vec![T::zero(); heads * n];
    let mut s = vec![T::zero(); bs * bs];
    let mut acc = vec![T::zero(); bs * dq];
    let mut m = vec![T::zero(); bs];
    let mut l = vec![T::zero(); bs];

    for head in 0..heads {
        let qh = MatView::col_block(q, head * dq, dq);
        let kh = MatView::col_block(k, head * dq, dq);
        let vh = MatView::col_block(v, head * dq, dq);
        for q0 in (0..n).step_by(bs) {
            let q1 = (q0 + bs).min(n);
            let bq = q1 - q0;
            m[..bq].fill(T::neg_infinity());
            l[..bq].fill(T::zero());
            acc[..bq * dq].fill(T::zero());
            for k0 in (0..n).step_by(bs) {
                let k1 = (k0 + bs).min(n);
                let bk = k1 - k0;
                gemm_into(scale, qh.rows(q0, q1), kh.rows(k0, k1).t(), T::zero(), &mut s, 0, bk);
                for r in 0..bq {
                    let row = &mut s[r * bk..(r + 1) * bk];
                    let tile_max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let m_new = m[r].max(tile_max);
                    let corr = if m[r] == T::neg_infinity() {
                        T::zero()
                    } else {
                        (m[r] - m_new).exp()
                    };
                    let mut row_sum = T::zero();
                    for x in row.iter_mut() {
                        *x = (*x - m_new).exp();
                        row_sum += *x;
                    }
                    l[r] = l[r] * corr + row_sum;
                    m[r] = m_new;
                    if corr != T::one() {
                        for a in &mut acc[r * dq..(r + 1) * dq] {
                            *a *= corr;
                        }
                    }
                }
                let pv = MatView {
                    data: &s,
                    offset: 0,
                    rows: bq,
                    cols: bk,
                    rs: bk,
                    cs: 1,
                };
                gemm_into(T::one(), pv, vh.rows(k0, k1), T::one(), &mut acc, 0, dq);
            }
            for r in 0..bq {
                let dst = &mut out.row_mut(q0 + r)[head * dq..(head + 1) * dq];
                for (o, &a) in dst.iter_mut().zip(&acc[r * dq..(r + 1) * dq]) {
                    *o = a / l[r];
                }
                lse[head * n + q0 + r] = m[r] + l[r].ln();
            }
        }
    }
    (out, lse)
}

/// Tiled backward: weight tiles are recomputed from the saved
/// log-sum-exp, so memory stays O(block²) per step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn flash_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    out: &Tensor<T>,
    dout: &Tensor<T>,
    lse: &[T],
    heads: usize,
    block: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d) = q.shape();
    let dq = d / heads;
    let scale = T::one() / T::of(dq as f64).sqrt();
    let bs = block.min(n).max(1);
    let mut g_q = Tensor::zeros(n, d);
    let mut g_k = Tensor::zeros(n, d);
    let mut g_v = Tensor::zeros(n, d);
    let mut p = vec![T::zero(); bs * bs];
    let mut dp = vec![T::zero(); bs * bs];
    let mut delta = vec![T::zero(); bs];

    for head in 0..heads {
        let c0 = head * dq;
        let qh = MatView::col_block(q, c0, dq);
        let kh = MatView::col_block(k, c0, dq);
        let vh = MatView::col_block(v, c0, dq);
        let doh = MatView::col_block(dout, c0, dq);
        for q0 in (0..n).step_by(bs) {
            let q1 = (q0 + bs).min(n);
            let bq = q1 - q0;
            for r in 0..bq {
                let o = &out.row(q0 + r)[c0..c0 + dq];
                let g = &dout.row(q0 + r)[c0..c0 + dq];
                delta[r] = o.iter().zip(g).map(|(&a, &b)| a * b).sum();
            }
            for k0 in (0..n).step_by(bs) {
                let k1 = (k0 + bs).min(n);
                let bk = k1 - k0;
                gemm_into(scale, qh.rows(q0, q1), kh.rows(k0, k1).t(), T::zero(), &mut p, 0, bk);
                for r in 0..bq {
                    let l = lse[head * n + q0 + r];
                    for x in &mut p[r * bk..(r + 1) * bk] {
                        *x = (*x - l).exp();
                    }
                }
                let pv = MatView {
                    data: &p,
                    offset: 0,
                    rows: bq,
                    cols: bk,
                    rs: bk,
                    cs: 1,
                };
                gemm_into(
                    T::one(),
                    pv.t(),
                    doh.rows(q0, q1),
                    T::one(),
                    g_v.data_mut(),
                    k0 * d + c0,
                    d,
                );
                gemm_into(
                    T::one(),
                    doh.rows(q0, q1),
                    vh.rows(k0, k1).t(),
                    T::zero(),
                    &mut dp,
                    0,
                    bk,
                );
                for r in 0..bq {
                    for c in 0..bk {
                        let i = r * bk + c;
                        dp[i] = p[i] * (dp[i] - delta[r]);
                    }
                }
                let ds = MatView {
                    data: &dp,
                    offset: 0,
                    rows: bq,
                    cols: bk,
                    rs: bk,
                    cs: 1,
                };
                gemm_into(scale, ds, kh.rows(k0, k1), T::one(), g_q.data_mut(), q0 * d + c0, d);
                gemm_into(scale, ds.t(), qh.rows(q0, q1), T::one(), g_k.data_mut(), k0 * d + c0, d);
            }
        }
    }
    (g_q, g_k, g_v)
}
