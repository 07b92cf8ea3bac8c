use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use igt_bench::{attention_params, default_model, random_coords, random_features, random_graph};
use igt_core::layers::{attention_naive_values, attention_tiled_values};
use igt_core::{knn_adjacency, AttentionKernel, BlockMode, GraphConfig};
use std::hint::black_box;

fn attention_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    group.sample_size(10);
    let params = attention_params::<f32>(256, 8, 1);
    for n in [256, 1024] {
        let h = random_features::<f32>(n, 256, 2);
        group.bench_with_input(BenchmarkId::new("naive", n), &h, |b, h| {
            b.iter(|| attention_naive_values(black_box(h), &params).unwrap())
        });
        for block in [16, 128] {
            group.bench_with_input(BenchmarkId::new(format!("tiled/{block}"), n), &h, |b, h| {
                b.iter(|| attention_tiled_values(black_box(h), &params, block).unwrap())
            });
        }
    }
    group.finish();
}

fn knn(c: &mut Criterion) {
    let coords = random_coords(256, 3);
    let cfg = GraphConfig::default();
    c.bench_function("knn/256", |b| {
        b.iter(|| knn_adjacency(black_box(&coords), &cfg).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grads");
    group.sample_size(10);
    let model = default_model::<f32>(64, 4);
    let graph = random_graph::<f32>(160, 64, 5);
    for (mode, kernel) in [
        (BlockMode::Full, AttentionKernel::Tiled { block: 64 }),
        (BlockMode::Full, AttentionKernel::Naive),
        (BlockMode::NoAttn, AttentionKernel::Naive),
        (BlockMode::NoGcn, AttentionKernel::Tiled { block: 64 }),
    ] {
        group.bench_function(format!("{}/{}", mode.as_str(), kernel.label()), |b| {
            b.iter(|| model.loss_and_grads(black_box(&graph), mode, kernel).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, attention_kernels, knn, training_step);
criterion_main!(benches);
