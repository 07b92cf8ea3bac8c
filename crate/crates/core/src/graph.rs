//! Per-bag graph construction: k-NN adjacency over patch coordinates,
//! stored as CSR.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{IgtError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Compressed sparse row adjacency without edge weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    /// Builds from per-node neighbor lists; lists are sorted and deduplicated.
    pub fn from_neighbor_lists(mut lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for (u, list) in lists.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&v| v >= n || v == u) {
                return Err(IgtError::Contract(format!(
                    "invalid neighbor {bad} for node {u} in a {n}-node graph"
                )));
            }
            indices.extend_from_slice(list);
            offsets.push(indices.len());
        }
        Ok(Csr { offsets, indices })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Csr {
            offsets: vec![0; n + 1],
            indices: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.indices[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn n_directed_edges(&self) -> usize {
        self.indices.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n_nodes()).all(|u| self.neighbors(u).iter().all(|&v| self.has_edge(v, u)))
    }

    /// Unordered pairs `(u, v)` with `u < v`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n_nodes() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Checks the structural invariants: monotone offsets, in-range sorted
    /// unique columns, no self-loops.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.offsets[0] != 0 || *self.offsets.last().unwrap() != self.indices.len() {
            return Err(IgtError::Contract("CSR offsets do not span the index array".into()));
        }
        for u in 0..n {
            if self.offsets[u] > self.offsets[u + 1] {
                return Err(IgtError::Contract(format!("CSR offsets decrease at row {u}")));
            }
            let row = self.neighbors(u);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(IgtError::Contract(format!("row {u} not strictly sorted")));
            }
            if row.iter().any(|&v| v >= n || v == u) {
                return Err(IgtError::Contract(format!("row {u} has an invalid column")));
            }
        }
        Ok(())
    }

    /// Relabels so that new node `i` is old node `perm[i]`.
    fn permuted(&self, perm: &[usize], inverse: &[usize]) -> Csr {
        let lists = perm
            .iter()
            .map(|&old| self.neighbors(old).iter().map(|&v| inverse[v]).collect())
            .collect();
        Csr::from_neighbor_lists(lists).expect("permutation preserves validity")
    }
}

/// Which vectors the k-NN search runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborSpace {
    Spatial,
    Feature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    /// Union-symmetrize the directed k-NN relation.
    pub symmetrize: bool,
    pub space: NeighborSpace,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: 8,
            symmetrize: true,
            space: NeighborSpace::Spatial,
        }
    }
}

/// A bag as a graph: node features, patch centres, adjacency and label.
#[derive(Clone, Debug, PartialEq)]
pub struct WsiGraph<T> {
    pub features: Tensor<T>,
    pub coords: Vec<[f32; 2]>,
    pub adjacency: Arc<Csr>,
    pub label: usize,
}

impl<T> WsiGraph<T> {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }
}

/// k nearest neighbours of every point under squared Euclidean distance,
/// ties broken by lower index, self excluded.
fn directed_knn(n: usize, k: usize, dist2: impl Fn(usize, usize) -> f64) -> Vec<Vec<usize>> {
    let mut lists = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist2(i, j), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        lists.push(cand.iter().map(|&(_, j)| j).collect());
    }
    lists
}

fn finish(mut lists: Vec<Vec<usize>>, symmetrize: bool) -> Result<Csr> {
    if symmetrize {
        let directed = lists.clone();
        for (u, nbrs) in directed.iter().enumerate() {
            for &v in nbrs {
                lists[v].push(u);
            }
        }
    }
    Csr::from_neighbor_lists(lists)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(IgtError::Config("k must be at least 1".into()));
    }
    if n <= k {
        return Err(IgtError::Config(format!("k-NN needs more than k={k} nodes, got {n}")));
    }
    Ok(())
}

/// k-NN adjacency over 2-D patch coordinates.
pub fn knn_adjacency(coords: &[[f32; 2]], cfg: &GraphConfig) -> Result<Csr> {
    let n = coords.len();
    check_k(n, cfg.k)?;
    if coords.iter().flatten().any(|c| !c.is_finite()) {
        return Err(IgtError::Contract("non-finite coordinate".into()));
    }
    let lists = directed_knn(n, cfg.k, |i, j| {
        let dx = coords[i][0] as f64 - coords[j][0] as f64;
        let dy = coords[i][1] as f64 - coords[j][1] as f64;
        dx * dx + dy * dy
    });
    finish(lists, cfg.symmetrize)
}

/// k-NN adjacency over the rows of a feature matrix.
pub fn knn_adjacency_features<T: Real>(features: &Tensor<T>, cfg: &GraphConfig) -> Result<Csr> {
    let n = features.rows();
    check_k(n, cfg.k)?;
    let lists = directed_knn(n, cfg.k, |i, j| {
        features
            .row(i)
            .iter()
            .zip(features.row(j))
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum()
    });
    finish(lists, cfg.symmetrize)
}

/// Assembles a bag graph. `name` identifies the bag in error messages.
///
/// A single-node bag gets an empty adjacency, since no k ≥ 1 is valid.
pub fn build_graph<T: Real>(
    features: Tensor<T>,
    coords: Vec<[f32; 2]>,
    label: usize,
    cfg: &GraphConfig,
    name: &str,
) -> Result<WsiGraph<T>> {
    if features.rows() != coords.len() {
        return Err(IgtError::Ingestion {
            source_name: name.to_string(),
            offset: 0,
            message: format!("{} feature rows but {} coordinates", features.rows(), coords.len()),
        });
    }
    let adjacency = if coords.len() == 1 {
        Csr::empty(1)
    } else {
        match cfg.space {
            NeighborSpace::Spatial => knn_adjacency(&coords, cfg)?,
            NeighborSpace::Feature => knn_adjacency_features(&features, cfg)?,
        }
    };
    Ok(WsiGraph {
        features,
        coords,
        adjacency: Arc::new(adjacency),
        label,
    })
}

/// Relabels nodes so that node `i` of the result is node `perm[i]` of `g`.
pub fn permute_graph<T: Real>(g: &WsiGraph<T>, perm: &[usize]) -> Result<WsiGraph<T>> {
    let n = g.n_nodes();
    if perm.len() != n {
        return Err(IgtError::Contract(format!(
            "permutation has {} entries for {n} nodes",
            perm.len()
        )));
    }
    let mut inverse = vec![usize::MAX; n];
    for (new, &old) in perm.iter().enumerate() {
        if old >= n || inverse[old] != usize::MAX {
            return Err(IgtError::Contract("permutation is not a bijection".into()));
        }
        inverse[old] = new;
    }
    Ok(WsiGraph {
        features: g.features.gather_rows(perm),
        coords: perm.iter().map(|&i| g.coords[i]).collect(),
        adjacency: Arc::new(g.adjacency.permuted(perm, &inverse)),
        label: g.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Vec<[f32; 2]> {
        (0..9).map(|i| [(i % 3) as f32, (i / 3) as f32]).collect()
    }

    #[test]
    fn nine_point_grid_is_complete() {
        let csr = knn_adjacency(&grid3(), &GraphConfig::default()).unwrap();
        for u in 0..9 {
            assert_eq!(csr.degree(u), 8);
        }
        assert_eq!(csr.undirected_edges().len(), 36);
    }

    #[test]
    fn two_points_share_one_edge() {
        let cfg = GraphConfig {
            k: 1,
            ..GraphConfig::default()
        };
        let csr = knn_adjacency(&[[0.0, 0.0], [5.0, 0.0]], &cfg).unwrap();
        assert_eq!(csr.undirected_edges(), vec![(0, 1)]);
    }

    #[test]
    fn identical_coordinates_tie_break_by_index() {
        let cfg = GraphConfig {
            k: 2,
            ..GraphConfig::default()
        };
        let csr = knn_adjacency(&[[1.0, 1.0]; 5], &cfg).unwrap();
        // directed: 0->{1,2}, 1->{0,2}, 2->{0,1}, 3->{0,1}, 4->{0,1}
        assert_eq!(csr.neighbors(0), &[1, 2, 3, 4]);
        assert_eq!(csr.neighbors(1), &[0, 2, 3, 4]);
        assert_eq!(csr.neighbors(2), &[0, 1]);
        assert_eq!(csr.neighbors(3), &[0, 1]);
        assert_eq!(csr.neighbors(4), &[0, 1]);
        assert!(csr.is_symmetric());
    }

    #[test]
    fn too_few_nodes_is_a_config_error() {
        let err = knn_adjacency(
            &grid3(),
            &GraphConfig {
                k: 9,
                ..GraphConfig::default()
            },
        );
        assert!(matches!(err, Err(IgtError::Config(_))));
    }

    #[test]
    fn count_mismatch_names_the_bag() {
        let err = build_graph(
            Tensor::<f64>::zeros(3, 2),
            vec![[0.0, 0.0]; 4],
            0,
            &GraphConfig::default(),
            "bag_0007",
        )
        .unwrap_err();
        assert!(err.to_string().contains("bag_0007"));
    }

    #[test]
    fn permutation_must_be_bijective() {
        let g = build_graph(Tensor::<f64>::zeros(9, 2), grid3(), 0, &GraphConfig::default(), "g").unwrap();
        assert!(permute_graph(&g, &[0, 0, 1, 2, 3, 4, 5, 6, 7]).is_err());
        assert!(permute_graph(&g, &[0, 1]).is_err());
        let same = permute_graph(&g, &(0..9).collect::<Vec<_>>()).unwrap();
        assert_eq!(same, g);
        let rev: Vec<usize> = (0..9).rev().collect();
        assert_eq!(permute_graph(&g, &rev).unwrap().adjacency, g.adjacency);
    }
}
