//! Naive vs tiled attention: timing, buffer footprint and agreement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::attention::naive_weight_elements;
use crate::layers::{attention_naive_values, attention_tiled_values, tiled_aux_elements, AttentionParams};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub block: usize,
    pub naive_secs: f64,
    pub tiled_secs: f64,
    pub naive_weight_elements: usize,
    pub tiled_aux_elements: usize,
    pub max_abs_deviation: f64,
}

/// Agreement bound between the two kernels at each precision.
pub fn equivalence_tolerance<T: Real>() -> f64 {
    if T::BYTES == 8 {
        1e-12
    } else {
        1e-5
    }
}

/// Times both kernels on random inputs for every `(n, block)` pair.
/// A block of 0 in `blocks` stands for "the whole bag" (block = N).
pub fn bench_attention<T: Real>(
    ns: &[usize],
    blocks: &[usize],
    d: usize,
    heads: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AttentionParams::<Tensor<T>>::init(d, heads, &mut rng)?;
    let mut rows = Vec::new();
    for &n in ns {
        let h = Tensor::from_fn(n, d, |_, _| T::of(rng.random_range(-1.0..1.0)));
        let t0 = Instant::now();
        let naive = attention_naive_values(&h, &params)?;
        let naive_secs = t0.elapsed().as_secs_f64();
        for &b in blocks {
            let block = if b == 0 { n } else { b };
            let t0 = Instant::now();
            let tiled = attention_tiled_values(&h, &params, block)?;
            let tiled_secs = t0.elapsed().as_secs_f64();
            rows.push(BenchRow {
                n,
                block,
                naive_secs,
                tiled_secs,
                naive_weight_elements: naive_weight_elements(n),
                tiled_aux_elements: tiled_aux_elements(n, d, heads, block),
                max_abs_deviation: naive.max_abs_diff(&tiled),
            });
        }
    }
    Ok(rows)
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:>6} {:>6} {:>11} {:>11} {:>14} {:>12} {:>10}\n",
        "N", "block", "naive_s", "tiled_s", "naive_NxN", "tiled_aux", "max_dev"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>6} {:>6} {:>11.6} {:>11.6} {:>14} {:>12} {:>10.2e}\n",
            r.n,
            r.block,
            r.naive_secs,
            r.tiled_secs,
            r.naive_weight_elements,
            r.tiled_aux_elements,
            r.max_abs_deviation
        ));
    }
    out
}
