//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The synthetic ablation dominates the run time.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::*;
use igt_core::bench::bench_attention;
use igt_core::gradcheck::{run_suite, GradcheckOptions};
use igt_core::harness::train_dispatch;
use igt_core::layers::genconv::DEFAULT_EPSILON;
use igt_core::layers::{
    attention_naive_values, attention_tiled_values, attention_weights, genconv_forward, neighbor_weights,
    tiled_aux_elements, AttentionParams, GenConvParams,
};
use igt_core::metrics::auroc_binary;
use igt_core::{
    build_graph, checkpoint, generate, knn_adjacency, permute_graph, AttentionKernel, BlockMode, Csr, GraphConfig,
    IgtModel, ModelDims, PreparedData, Real, RunRecord, SynthSpec, SynthTask, Tape, Tensor, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradcheck() -> Check {
    let started = Instant::now();
    let results = run_suite(&GradcheckOptions::default()).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.component.as_str())
        .collect();
    ensure(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    for part in [
        "input-projection",
        "genconv",
        "attention-naive",
        "attention-tiled",
        "gti-block",
        "attention-pooling",
        "classifier",
        "full-model",
    ] {
        ensure(results.iter().any(|r| r.component.starts_with(part)), || {
            format!("{part} not checked")
        })?;
    }
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} components, worst {:.2e} ({}), {secs:.1}s",
        results.len(),
        worst.max_rel_error,
        worst.component
    ))
}

fn tiled_gap<T: Real>(n: usize, block: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let p = AttentionParams::<Tensor<T>>::init(256, 8, &mut r).unwrap();
    let h = uniform(n, 256, -1.0, 1.0, &mut r).cast();
    let naive = attention_naive_values(&h, &p).unwrap();
    attention_tiled_values(&h, &p, block).unwrap().max_abs_diff(&naive)
}

fn tiled_equivalence() -> Check {
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    for n in [1, 3, 37, 256, 2048] {
        for block in [1, 16, 128, n] {
            let g64 = tiled_gap::<f64>(n, block, n as u64);
            let g32 = tiled_gap::<f32>(n, block, n as u64);
            ensure(g64 <= 1e-12 && g32 <= 1e-5, || {
                format!("N={n} block={block}: {g64:.2e} (f64), {g32:.2e} (f32)")
            })?;
            worst64 = worst64.max(g64);
            worst32 = worst32.max(g32);
        }
    }
    let rows = bench_attention::<f32>(&[256, 1024, 2048], &[16, 128], 256, 8, 0).map_err(|e| e.to_string())?;
    for r in &rows {
        ensure(r.naive_weight_elements == r.n * r.n, || {
            format!("naive buffer at N={} is {}", r.n, r.naive_weight_elements)
        })?;
        let fixed = tiled_aux_elements(r.block, 256, 8, r.block);
        ensure(r.tiled_aux_elements == fixed, || {
            format!("tiled footprint at N={} is {}", r.n, r.tiled_aux_elements)
        })?;
        ensure(r.max_abs_deviation <= 1e-5, || {
            format!("bench deviation {:.2e}", r.max_abs_deviation)
        })?;
    }
    Ok(format!(
        "worst {worst64:.2e} (f64), {worst32:.2e} (f32); naive buffer N^2 = {} at N=2048, tiled {} and {} for every N",
        2048 * 2048,
        tiled_aux_elements(16, 256, 8, 16),
        tiled_aux_elements(128, 256, 8, 128)
    ))
}

fn structural_oracles() -> Check {
    let mut r = rng(31);
    let mut graphs = 0;
    for n in [1, 2, 7, 23, 50] {
        for d in [4, 16] {
            let coords = random_coords(n, &mut r);
            let adj = if n == 1 {
                Csr::empty(1)
            } else {
                knn_adjacency(
                    &coords,
                    &GraphConfig {
                        k: 8.min(n - 1),
                        ..GraphConfig::default()
                    },
                )
                .unwrap()
            };
            let h = uniform(n, d, -2.0, 2.0, &mut r);
            let mut p = GenConvParams::<Tensor<f64>>::init(d, &mut r);
            p.mlp1.bias = uniform(1, d, -0.5, 0.5, &mut r);
            p.mlp2.bias = uniform(1, d, -0.5, 0.5, &mut r);
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let bound = p.map(&mut |t| tape.constant(t.clone()));
            let out = genconv_forward(&mut tape, hv, &Arc::new(adj.clone()), &bound).unwrap();
            ensure(*tape.value(out) == genconv_loop(&h, &adj, &p), || {
                format!("GENConv differs at N={n} d={d}")
            })?;
            graphs += 1;
        }
    }
    let mut knn_cases = 0;
    for (n, k) in [(9, 8), (50, 8), (200, 8), (500, 8), (500, 3), (121, 4)] {
        let coords = if n == 121 {
            (0..n).map(|i| [(i % 11) as f32, (i / 11) as f32]).collect()
        } else {
            random_coords(n, &mut r)
        };
        let adj = knn_adjacency(
            &coords,
            &GraphConfig {
                k,
                ..GraphConfig::default()
            },
        )
        .unwrap();
        ensure(csr_sets(&adj) == brute_knn(&coords, k), || {
            format!("k-NN differs at N={n} k={k}")
        })?;
        knn_cases += 1;
    }
    for case in 0..100 {
        let n = r.random_range(2..80);
        let levels = r.random_range(2..30u32);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        pos[0] = true;
        pos[1] = false;
        let got = auroc_binary(&scores, &pos).unwrap();
        let want = auroc_all_pairs(&scores, &pos);
        ensure((got - want).abs() < 1e-12, || {
            format!("AUROC case {case}: {got} vs {want}")
        })?;
    }
    Ok(format!(
        "GENConv exact on {graphs} graphs, k-NN on {knn_cases} point sets, AUROC on 100 cases"
    ))
}

fn permutation_gap<T: Real>(seed: u64, mode: BlockMode, kernel: AttentionKernel) -> f64 {
    let dims = ModelDims {
        d_in: 16,
        d: 64,
        n_blocks: 2,
        n_heads: 8,
        d_att: 32,
        n_classes: 2,
    };
    let model = IgtModel::<Tensor<T>>::init(dims, seed).unwrap();
    let mut r = rng(seed);
    let n = 90;
    let g = build_graph(
        uniform(n, 16, -1.0, 1.0, &mut r).cast(),
        random_coords(n, &mut r),
        0,
        &GraphConfig::default(),
        "p",
    )
    .unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let a = model.predict(&g, mode, kernel).unwrap();
    let b = model.predict(&permute_graph(&g, &perm).unwrap(), mode, kernel).unwrap();
    a.logits.max_abs_diff(&b.logits)
}

fn invariance() -> Check {
    let kernels = [
        (BlockMode::Full, AttentionKernel::Tiled { block: 16 }),
        (BlockMode::Full, AttentionKernel::Naive),
        (BlockMode::NoAttn, AttentionKernel::Naive),
        (BlockMode::NoGcn, AttentionKernel::Tiled { block: 64 }),
    ];
    let (mut w64, mut w32) = (0.0f64, 0.0f64);
    for (seed, (mode, kernel)) in kernels.into_iter().enumerate() {
        let g64 = permutation_gap::<f64>(seed as u64, mode, kernel);
        let g32 = permutation_gap::<f32>(seed as u64, mode, kernel);
        ensure(g64 <= 1e-10 && g32 <= 1e-5, || {
            format!("{mode:?}: permutation gap {g64:.2e} / {g32:.2e}")
        })?;
        w64 = w64.max(g64);
        w32 = w32.max(g32);
    }
    let mut r = rng(41);
    let n = 100;
    let coords = random_coords(n, &mut r);
    let adj = knn_adjacency(&coords, &GraphConfig::default()).unwrap();
    let h = uniform(n, 12, -4.0, 4.0, &mut r);
    let mut worst_sum = 0.0f64;
    for u in 0..n {
        let w = neighbor_weights(&h, &adj, u, 1.0, DEFAULT_EPSILON);
        for c in 0..12 {
            worst_sum = worst_sum.max(((0..w.rows()).map(|i| w.get(i, c)).sum::<f64>() - 1.0).abs());
        }
    }
    let p = AttentionParams::<Tensor<f64>>::init(12, 4, &mut r).unwrap();
    for w in attention_weights(&h, &p).unwrap() {
        for i in 0..n {
            worst_sum = worst_sum.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst_sum <= 1e-6, || format!("weights sum off by {worst_sum:.2e}"))?;
    let dims = ModelDims {
        d_in: 12,
        d: 32,
        n_blocks: 2,
        n_heads: 4,
        d_att: 16,
        n_classes: 2,
    };
    let model = IgtModel::<Tensor<f32>>::init(dims, 5).unwrap();
    for n in [1, 9, 60, 250] {
        let g = build_graph(
            uniform(n, 12, -3.0, 3.0, &mut r).cast(),
            random_coords(n, &mut r),
            0,
            &GraphConfig::default(),
            "a",
        )
        .unwrap();
        let alpha = model
            .predict(&g, BlockMode::Full, AttentionKernel::Naive)
            .unwrap()
            .alpha;
        let total: f32 = alpha.data().iter().sum();
        ensure(
            alpha.data().iter().all(|&a| a > 0.0 && a <= 1.0) && (total - 1.0).abs() <= 1e-6,
            || format!("alpha at N={n} sums to {total}"),
        )?;
    }
    Ok(format!(
        "permutation {w64:.2e} (f64), {w32:.2e} (f32); weight sums within {worst_sum:.1e}; alpha valid"
    ))
}

/// Noise level of the acceptance datasets. Instance-level signal at the
/// default σ = 1 is too weak for the bag-level targets; see the README.
const ABLATION_NOISE: f64 = 0.5;
const ABLATION_EPOCHS: usize = 15;

fn ablation_data(task: SynthTask) -> PreparedData {
    let spec = SynthSpec {
        noise: ABLATION_NOISE,
        seed: 1,
        ..SynthSpec::new(task)
    };
    PreparedData::from_generated(&generate(&spec).unwrap(), &spec.graph_config()).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ablation() -> Check {
    let base = TrainConfig {
        d: 64,
        epochs: ABLATION_EPOCHS,
        ..TrainConfig::default()
    };
    let tasks = [
        (SynthTask::SpatialMotif, BlockMode::NoGcn),
        (SynthTask::LongRange, BlockMode::NoAttn),
    ];
    let data: Vec<PreparedData> = tasks.iter().map(|&(t, _)| ablation_data(t)).collect();
    let jobs: Vec<(usize, TrainConfig)> = (0..tasks.len())
        .flat_map(|t| {
            let base = &base;
            [BlockMode::Full, tasks[t].1].into_iter().flat_map(move |mode| {
                (0..3).map(move |seed| {
                    (
                        t,
                        TrainConfig {
                            mode,
                            seed,
                            ..base.clone()
                        },
                    )
                })
            })
        })
        .collect();
    let records: Vec<(usize, RunRecord)> = jobs
        .par_iter()
        .map(|(t, cfg)| (*t, train_dispatch(cfg, &data[*t], None).unwrap()))
        .collect();
    let mut parts = Vec::new();
    let mut problems = Vec::new();
    let mut slowest = 0.0f64;
    for (t, &(task, ablated)) in tasks.iter().enumerate() {
        let acc = |mode: BlockMode| -> Vec<f64> {
            records
                .iter()
                .filter(|(i, r)| *i == t && r.mode == mode)
                .map(|(_, r)| r.test.accuracy)
                .collect()
        };
        let per_seed = |xs: &[f64]| xs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("/");
        let (full_runs, other_runs) = (acc(BlockMode::Full), acc(ablated));
        let (full, other) = (mean(&full_runs), mean(&other_runs));
        for (_, r) in records.iter().filter(|(i, r)| *i == t && r.mode == BlockMode::Full) {
            slowest = slowest.max(r.wall_clock_secs);
        }
        parts.push(format!(
            "{}: full {full:.3} ({}) vs {} {other:.3} ({})",
            task.as_str(),
            per_seed(&full_runs),
            ablated.as_str(),
            per_seed(&other_runs)
        ));
        if full < 0.90 || full < other + 0.10 {
            problems.push(format!(
                "{} full {full:.3}, {} {other:.3}",
                task.as_str(),
                ablated.as_str()
            ));
        }
    }
    if slowest > 600.0 {
        problems.push(format!("slowest full run {slowest:.0}s"));
    }
    let summary = format!(
        "{}; slowest full run {slowest:.0}s (σ={ABLATION_NOISE}, d=64)",
        parts.join("; ")
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{} [{summary}]", problems.join("; ")))
    }
}

fn determinism() -> Check {
    let spec = SynthSpec {
        n_bags: 30,
        n_min: 64,
        n_max: 96,
        d_in: 8,
        seed: 9,
        ..SynthSpec::new(SynthTask::Hybrid)
    };
    let g = generate(&spec).unwrap();
    ensure(g == generate(&spec).unwrap(), || {
        "generator is not deterministic".into()
    })?;
    let data = PreparedData::from_generated(&g, &spec.graph_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut runs = 0;
    for precision in ["f32", "f64"] {
        let mut cfg = TrainConfig {
            d: 16,
            n_heads: 2,
            d_att: 8,
            epochs: 2,
            ..TrainConfig::default()
        };
        cfg.set("precision", precision).unwrap();
        let (pa, pb) = (
            dir.path().join(format!("a{precision}")),
            dir.path().join(format!("b{precision}")),
        );
        let a = train_dispatch(&cfg, &data, Some(&pa)).unwrap();
        let b = train_dispatch(&cfg, &data, Some(&pb)).unwrap();
        ensure(a == b, || format!("{precision} run records differ"))?;
        ensure(std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap(), || {
            "checkpoints differ".into()
        })?;
        runs += 2;
    }
    let dims = ModelDims {
        d_in: 8,
        d: 16,
        n_blocks: 2,
        n_heads: 2,
        d_att: 8,
        n_classes: 2,
    };
    let model = IgtModel::<Tensor<f64>>::init(dims, 3).unwrap();
    let path = dir.path().join("m.igt");
    checkpoint::save(&path, &model.named()).unwrap();
    let mut back = IgtModel::<Tensor<f64>>::init(dims, 4).unwrap();
    back.load_named(checkpoint::load(&path).unwrap()).unwrap();
    let same_bits = model
        .named()
        .iter()
        .zip(back.named())
        .all(|((_, a), (_, b))| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(same_bits, || "checkpoint round trip changed bits".into())?;
    for (i, bag) in g.bags.iter().enumerate() {
        let p = dir.path().join(format!("{i}.igtb"));
        igt_core::data::write_bag(&p, bag).unwrap();
        let back = igt_core::data::read_bag(&p).unwrap();
        let same = back
            .features
            .data()
            .iter()
            .zip(bag.features.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same && back == *bag, || format!("bag {i} changed in round trip"))?;
    }
    Ok(format!(
        "{runs} runs in identical pairs; checkpoint and {} bag round trips bit-exact",
        g.bags.len()
    ))
}

fn defaults() -> Check {
    let c = TrainConfig::default();
    let checks = [
        ("d", c.d == 256),
        ("k", c.k == 8),
        ("weight decay", c.optimizer.weight_decay == 1e-5),
        ("initial lr", c.schedule.initial == 1e-3),
        ("decayed lr", c.schedule.decayed == 1e-4),
        ("batch size", c.batch_size == 1),
        ("GENConv eps", c.gcn_epsilon == 1e-7),
        ("blocks", (2..=3).contains(&c.n_blocks)),
    ];
    let bad: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    ensure(bad.is_empty(), || format!("wrong defaults: {}", bad.join(", ")))?;
    Ok(format!(
        "d={} k={} wd={:e} lr {:e}->{:e} batch {} eps={:e} blocks={}",
        c.d,
        c.k,
        c.optimizer.weight_decay,
        c.schedule.initial,
        c.schedule.decayed,
        c.batch_size,
        c.gcn_epsilon,
        c.n_blocks
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("gradient check", gradcheck),
        ("tiled vs naive attention", tiled_equivalence),
        ("structural oracles", structural_oracles),
        ("invariance", invariance),
        ("synthetic ablation", ablation),
        ("determinism", determinism),
        ("defaults", defaults),
    ];
    let only: Option<usize> = std::env::var("IGT_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {}. {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
