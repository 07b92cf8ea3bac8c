//! Synthetic bag generators whose labels depend on spatial structure
//! (spatial-motif) or on bag-wide co-occurrence (long-range).
//!
//! Instances are `3·e_p + σ·z` where `p` is the prototype index of the
//! instance kind and `z` is standard normal. Bags lie on a jittered square
//! grid and labels are defined over the same symmetric k-NN graph the model
//! sees.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_dataset, Bag, Splits};
use crate::error::{IgtError, Result};
use crate::graph::{knn_adjacency, Csr, GraphConfig};
use crate::tensor::Tensor;

pub const PROTOTYPE_SCALE: f32 = 3.0;
pub const SPLIT_RATIO: [f64; 3] = [6.5, 1.5, 2.0];
const MAX_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    /// Positive iff some A instance is a graph neighbour of some B instance.
    SpatialMotif,
    /// Positive iff both C and D occur; C and D are never close in the graph.
    LongRange,
    /// Positive iff both of the above conditions hold.
    Hybrid,
}

impl SynthTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spatial-motif" => Ok(SynthTask::SpatialMotif),
            "long-range" => Ok(SynthTask::LongRange),
            "hybrid" => Ok(SynthTask::Hybrid),
            _ => Err(IgtError::Config(format!(
                "unknown task {s:?} (expected spatial-motif, long-range or hybrid)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SynthTask::SpatialMotif => "spatial-motif",
            SynthTask::LongRange => "long-range",
            SynthTask::Hybrid => "hybrid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceKind {
    Background,
    A,
    B,
    C,
    D,
}

impl InstanceKind {
    pub fn prototype(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub n_bags: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub d_in: usize,
    pub noise: f64,
    pub seed: u64,
    pub k: usize,
    /// Minimum hop distance between any C and any D instance.
    pub min_separation: usize,
}

impl SynthSpec {
    pub fn new(task: SynthTask) -> Self {
        SynthSpec {
            task,
            n_bags: 500,
            n_min: 64,
            n_max: 256,
            d_in: 64,
            noise: 1.0,
            seed: 0,
            k: 8,
            min_separation: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(IgtError::Config(m));
        if self.n_min < 16 {
            return fail(format!("n_min must be at least 16, got {}", self.n_min));
        }
        if self.n_max < self.n_min {
            return fail(format!("n_max {} below n_min {}", self.n_max, self.n_min));
        }
        if self.d_in < 5 {
            return fail(format!(
                "d_in must be at least 5 to hold the prototypes, got {}",
                self.d_in
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if self.k == 0 || self.k >= self.n_min {
            return fail(format!("k={} must lie in 1..n_min", self.k));
        }
        if self.n_bags < 2 {
            return fail("need at least two bags".into());
        }
        Ok(())
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            ..GraphConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedDataset {
    pub spec: SynthSpec,
    pub bags: Vec<Bag>,
    /// Ground-truth kind of every instance, aligned with `bags`.
    pub kinds: Vec<Vec<InstanceKind>>,
    pub splits: Splits<usize>,
    pub class_names: Vec<String>,
}

impl GeneratedDataset {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_dataset(
            dir,
            &self.bags,
            &self.splits,
            &self.class_names,
            Some(self.spec.task.as_str()),
        )
    }
}

/// Generates the whole dataset. Bag `i` draws from its own ChaCha stream
/// `(seed, i)`, so output does not depend on thread scheduling. Labels
/// alternate 0, 1, 0, ... by bag index.
pub fn generate(spec: &SynthSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let made = (0..spec.n_bags)
        .into_par_iter()
        .map(|i| generate_bag(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let (bags, kinds): (Vec<_>, Vec<_>) = made.into_iter().unzip();
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let splits = stratified_split(&labels, spec.seed);
    Ok(GeneratedDataset {
        spec: spec.clone(),
        bags,
        kinds,
        splits,
        class_names: vec!["negative".into(), "positive".into()],
    })
}

/// Per-class split in the 6.5 : 1.5 : 2.0 ratio, each list sorted.
pub fn stratified_split(labels: &[usize], seed: u64) -> Splits<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let total: f64 = SPLIT_RATIO.iter().sum();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Splits::default();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (n * SPLIT_RATIO[0] / total).round() as usize;
        let n_val = ((n * SPLIT_RATIO[1] / total).round() as usize).min(idx.len() - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    out
}

/// Jittered square grid: instance `i` sits near cell `(i mod W, i div W)`.
pub fn grid_layout(n: usize, rng: &mut impl Rng) -> Vec<[f32; 2]> {
    let w = (n as f64).sqrt().ceil() as usize;
    (0..n)
        .map(|i| {
            let jx: f32 = rng.random_range(-0.25..0.25);
            let jy: f32 = rng.random_range(-0.25..0.25);
            [(i % w) as f32 + jx, (i / w) as f32 + jy]
        })
        .collect()
}

/// Hop distances from a set of sources; unreachable nodes get `usize::MAX`.
pub fn hop_distances(adj: &Csr, sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.n_nodes()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        for &v in adj.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn generate_bag(spec: &SynthSpec, index: usize) -> Result<(Bag, Vec<InstanceKind>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = rng.random_range(spec.n_min..=spec.n_max);
    let coords = grid_layout(n, &mut rng);
    let adj = knn_adjacency(&coords, &spec.graph_config())?;
    let label = index % 2;
    let positive = label == 1;
    let kinds = (0..MAX_RETRIES)
        .find_map(|_| {
            let mut kinds = vec![InstanceKind::Background; n];
            let ok = match spec.task {
                SynthTask::SpatialMotif => place_motif(&adj, positive, &mut kinds, &mut rng),
                SynthTask::LongRange => place_long_range(&adj, positive, spec.min_separation, &mut kinds, &mut rng),
                SynthTask::Hybrid => {
                    // Negatives fail one or both conditions with equal odds.
                    let (motif, pair) = if positive {
                        (true, true)
                    } else {
                        [(false, true), (true, false), (false, false)][rng.random_range(0..3)]
                    };
                    place_motif(&adj, motif, &mut kinds, &mut rng)
                        && place_long_range(&adj, pair, spec.min_separation, &mut kinds, &mut rng)
                }
            };
            ok.then_some(kinds)
        })
        .ok_or_else(|| {
            IgtError::Generation(format!(
                "bag {index}: no valid {} placement for N={n} after {MAX_RETRIES} attempts",
                spec.task.as_str()
            ))
        })?;
    let noise = spec.noise as f32;
    let features = Tensor::from_fn(n, spec.d_in, |i, j| {
        let z: f32 = rng.sample(StandardNormal);
        let base = if j == kinds[i].prototype() {
            PROTOTYPE_SCALE
        } else {
            0.0
        };
        base + noise * z
    });
    Ok((
        Bag {
            coords,
            features,
            label,
        },
        kinds,
    ))
}

fn free_nodes(kinds: &[InstanceKind], rng: &mut impl Rng) -> Vec<usize> {
    let mut free: Vec<usize> = (0..kinds.len())
        .filter(|&i| kinds[i] == InstanceKind::Background)
        .collect();
    free.shuffle(rng);
    free
}

/// `p` A and `p` B instances with `p` between N/32 and N/16 (at least 2).
/// Positives pair every A with an adjacent B; negatives keep every B away
/// from every A.
fn place_motif(adj: &Csr, positive: bool, kinds: &mut [InstanceKind], rng: &mut impl Rng) -> bool {
    use InstanceKind::{Background, A, B};
    let n = kinds.len();
    let p = rng.random_range(2.max(n / 32)..=2.max(n / 16));
    if positive {
        for _ in 0..p {
            let free = free_nodes(kinds, rng);
            let Some(&u) = free
                .iter()
                .find(|&&u| adj.neighbors(u).iter().any(|&v| kinds[v] == Background))
            else {
                return false;
            };
            let nbrs: Vec<usize> = adj
                .neighbors(u)
                .iter()
                .copied()
                .filter(|&v| kinds[v] == Background)
                .collect();
            kinds[u] = A;
            kinds[nbrs[rng.random_range(0..nbrs.len())]] = B;
        }
        true
    } else {
        let free = free_nodes(kinds, rng);
        if free.len() < p {
            return false;
        }
        for &i in &free[..p] {
            kinds[i] = A;
        }
        let allowed: Vec<usize> = free_nodes(kinds, rng)
            .into_iter()
            .filter(|&v| adj.neighbors(v).iter().all(|&u| kinds[u] != A))
            .collect();
        if allowed.len() < p {
            return false;
        }
        for &i in &allowed[..p] {
            kinds[i] = B;
        }
        true
    }
}

/// Picks up to `count` free nodes, none adjacent to a C or D instance or to
/// each other, satisfying `extra`.
fn pick_isolated(
    adj: &Csr,
    kinds: &[InstanceKind],
    count: usize,
    rng: &mut impl Rng,
    extra: impl Fn(usize) -> bool,
) -> Option<Vec<usize>> {
    use InstanceKind::{C, D};
    let mut taken = vec![false; kinds.len()];
    let mut out = Vec::with_capacity(count);
    for v in free_nodes(kinds, rng) {
        if out.len() == count {
            break;
        }
        let clear = adj
            .neighbors(v)
            .iter()
            .all(|&u| !taken[u] && kinds[u] != C && kinds[u] != D);
        if clear && extra(v) {
            taken[v] = true;
            out.push(v);
        }
    }
    (out.len() == count).then_some(out)
}

/// C and D instances on an independent set. Negatives hold `T` instances
/// of one type; positives hold a majority of one type and one or two of
/// the other, at least `min_sep` hops away from every majority instance.
fn place_long_range(adj: &Csr, positive: bool, min_sep: usize, kinds: &mut [InstanceKind], rng: &mut impl Rng) -> bool {
    use InstanceKind::{C, D};
    let n = kinds.len();
    let t = rng.random_range(4.max(n / 16)..=4.max(n / 8));
    let (major, minor) = if rng.random_bool(0.5) { (C, D) } else { (D, C) };
    if !positive {
        let Some(nodes) = pick_isolated(adj, kinds, t, rng, |_| true) else {
            return false;
        };
        for i in nodes {
            kinds[i] = major;
        }
        return true;
    }
    let m = rng.random_range(1..=2usize);
    let Some(minority) = pick_isolated(adj, kinds, m, rng, |_| true) else {
        return false;
    };
    for &i in &minority {
        kinds[i] = minor;
    }
    let dist = hop_distances(adj, &minority);
    let Some(majority) = pick_isolated(adj, kinds, t - m, rng, |v| dist[v] >= min_sep) else {
        return false;
    };
    for i in majority {
        kinds[i] = major;
    }
    true
}
