use igt_bench::{attention_params, default_model, random_graph};
use igt_core::layers::{attention_naive_values, attention_tiled_values};
use igt_core::{AttentionKernel, BlockMode};

#[test]
fn fixtures_are_seeded() {
    let a = random_graph::<f32>(40, 16, 3);
    let b = random_graph::<f32>(40, 16, 3);
    assert_eq!(a.features, b.features);
    assert_eq!(a.adjacency, b.adjacency);
    assert_ne!(a.features, random_graph::<f32>(40, 16, 4).features);
    assert_eq!(attention_params::<f64>(32, 4, 1), attention_params::<f64>(32, 4, 1));
}

#[test]
fn default_model_runs_on_a_bench_graph() {
    let model = default_model::<f32>(16, 0);
    let g = random_graph::<f32>(50, 16, 1);
    let tiled = model
        .predict(&g, BlockMode::Full, AttentionKernel::Tiled { block: 16 })
        .unwrap();
    let naive = model.predict(&g, BlockMode::Full, AttentionKernel::Naive).unwrap();
    assert_eq!(tiled.logits.shape(), (1, 2));
    assert!(tiled.logits.max_abs_diff(&naive.logits) <= 1e-5);
}

#[test]
fn bench_kernels_agree() {
    let p = attention_params::<f32>(64, 8, 2);
    let h = igt_bench::random_features::<f32>(100, 64, 5);
    let naive = attention_naive_values(&h, &p).unwrap();
    let tiled = attention_tiled_values(&h, &p, 16).unwrap();
    assert!(naive.max_abs_diff(&tiled) <= 1e-5);
}
