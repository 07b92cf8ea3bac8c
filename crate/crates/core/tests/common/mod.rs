//! Independent reference implementations used by the integration tests.
//! Each one is written from the defining formula with plain loops and
//! shares no code with the library beyond its data types.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use igt_core::data::InstanceKind;
use igt_core::layers::GenConvParams;
use igt_core::{Csr, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_coords(n: usize, rng: &mut impl Rng) -> Vec<[f32; 2]> {
    (0..n)
        .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
        .collect()
}

/// Sort every other point by (distance, index), keep the first k, then add
/// the reverse of every kept edge.
pub fn brute_knn(coords: &[[f32; 2]], k: usize) -> Vec<BTreeSet<usize>> {
    let n = coords.len();
    let mut out = vec![BTreeSet::new(); n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = coords[i][0] as f64 - coords[j][0] as f64;
                let dy = coords[i][1] as f64 - coords[j][1] as f64;
                (dx * dx + dy * dy, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            out[i].insert(j);
            out[j].insert(i);
        }
    }
    out
}

pub fn csr_sets(adj: &Csr) -> Vec<BTreeSet<usize>> {
    (0..adj.n_nodes())
        .map(|u| adj.neighbors(u).iter().copied().collect())
        .collect()
}

fn linear_loop(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    (0..w.cols())
        .map(|j| {
            let mut acc = 0.0;
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * w.get(i, j);
            }
            acc + b.get(0, j)
        })
        .collect()
}

/// GENConv written out node by node and channel by channel:
/// `msg = ReLU(h_v) + eps`, `w_v = exp(beta msg_v) / Σ exp(beta msg)` per
/// channel (max-shifted), `m_u = Σ w_v msg_v`, then
/// `MLP2(ReLU(MLP1(h_u + m_u)))`.
pub fn genconv_loop(h: &Tensor<f64>, adj: &Csr, p: &GenConvParams<Tensor<f64>>) -> Tensor<f64> {
    let (n, d) = (h.rows(), h.cols());
    let mut out = Tensor::zeros(n, d);
    for u in 0..n {
        let nbrs = adj.neighbors(u);
        let mut x = h.row(u).to_vec();
        if !nbrs.is_empty() {
            for c in 0..d {
                let msg: Vec<f64> = nbrs.iter().map(|&v| h.get(v, c).max(0.0) + p.eps).collect();
                let mut mx = f64::NEG_INFINITY;
                for &m in &msg {
                    mx = mx.max(p.beta * m);
                }
                let mut den = 0.0;
                for &m in &msg {
                    den += (p.beta * m - mx).exp();
                }
                let mut num = 0.0;
                for &m in &msg {
                    num += (p.beta * m - mx).exp() * m;
                }
                x[c] += num / den;
            }
        }
        let z: Vec<f64> = linear_loop(&x, &p.mlp1.weight, &p.mlp1.bias)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let y = linear_loop(&z, &p.mlp2.weight, &p.mlp2.bias);
        out.row_mut(u).copy_from_slice(&y);
    }
    out
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
pub fn auroc_all_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Spatial-motif label from geometry: some A has a B among its neighbours.
pub fn motif_label(adj: &Csr, kinds: &[InstanceKind]) -> usize {
    let hit = (0..kinds.len())
        .any(|u| kinds[u] == InstanceKind::A && adj.neighbors(u).iter().any(|&v| kinds[v] == InstanceKind::B));
    hit as usize
}

/// Long-range label from a presence scan: both C and D occur.
pub fn presence_label(kinds: &[InstanceKind]) -> usize {
    let has = |k| kinds.contains(&k);
    (has(InstanceKind::C) && has(InstanceKind::D)) as usize
}

/// Smallest hop distance between any C and any D, by breadth-first search
/// from every C.
pub fn min_cd_hops(adj: &Csr, kinds: &[InstanceKind]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for s in (0..kinds.len()).filter(|&i| kinds[i] == InstanceKind::C) {
        let mut dist = vec![usize::MAX; kinds.len()];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            if kinds[u] == InstanceKind::D {
                best = Some(best.map_or(dist[u], |b| b.min(dist[u])));
                break;
            }
            for &v in adj.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
    }
    best
}

/// Which instance kind each row is, read back from features generated
/// with zero noise.
pub fn kinds_from_clean_features(features: &Tensor<f32>) -> Vec<InstanceKind> {
    use InstanceKind::*;
    (0..features.rows())
        .map(|i| {
            let row = features.row(i);
            let hot = row.iter().position(|&x| x != 0.0).expect("one hot prototype");
            [Background, A, B, C, D][hot]
        })
        .collect()
}
