//! Seeded fixtures shared by the criterion benches under `benches/`.

use igt_core::layers::AttentionParams;
use igt_core::{build_graph, GraphConfig, IgtModel, ModelDims, Real, Tensor, WsiGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_features<T: Real>(n: usize, d: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(n, d, |_, _| T::of(rng.random_range(-1.0..1.0)))
}

pub fn attention_params<T: Real>(d: usize, heads: usize, seed: u64) -> AttentionParams<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AttentionParams::init(d, heads, &mut rng).expect("d divisible by heads")
}

pub fn random_coords(n: usize, seed: u64) -> Vec<[f32; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random_range(0.0..32.0), rng.random_range(0.0..32.0)])
        .collect()
}

/// A bag graph with spatial k = 8 neighbours.
pub fn random_graph<T: Real>(n: usize, d_in: usize, seed: u64) -> WsiGraph<T> {
    build_graph(
        random_features(n, d_in, seed),
        random_coords(n, seed + 1),
        1,
        &GraphConfig::default(),
        "bench",
    )
    .expect("valid bench graph")
}

/// Default-width model: d = 256, 2 blocks, 8 heads, binary head.
pub fn default_model<T: Real>(d_in: usize, seed: u64) -> IgtModel<Tensor<T>> {
    let dims = ModelDims {
        d_in,
        d: 256,
        n_blocks: 2,
        n_heads: 8,
        d_att: 128,
        n_classes: 2,
    };
    IgtModel::init(dims, seed).expect("valid dims")
}
