//! Central-difference gradient checks for every primitive op, every layer
//! and the full model.
//!
//! Analytic gradients come from the f64 tape. The finite-difference side
//! evaluates the same loss in double-double arithmetic ([`Dd`]), so its
//! rounding noise sits far below the tolerance even for entries whose
//! gradient is close to the absolute floor.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{OpKind, Tape, Var};
use crate::dd::Dd;
use crate::error::Result;
use crate::graph::{knn_adjacency, Csr, GraphConfig};
use crate::layers::{
    attention_naive, attention_tiled, genconv_forward, gti_block_forward, input_projection, AttentionKernel,
    AttentionParams, BlockMode, GenConvParams, GtiBlockParams, Linear,
};
use crate::mil::{attention_pool, classify, ClassifierParams, PoolingParams};
use crate::model::{IgtModel, ModelDims};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Bag sizes to sweep; 1 exercises the degenerate single-instance bag.
    pub sizes: Vec<usize>,
    pub d: usize,
    pub d_in: usize,
    pub n_heads: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Spread of the random bag features fed to the full model.
    pub feature_scale: f64,
    /// Corrupts one op's backward rule on the analytic side.
    pub fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            sizes: vec![1, 5, 9],
            d: 8,
            d_in: 6,
            n_heads: 2,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            feature_scale: 1.0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub component: String,
    pub max_rel_error: f64,
    /// Input and flat index of the worst entry.
    pub worst: String,
    pub n_checked: usize,
    /// Entries whose analytic gradient is not exactly zero.
    pub n_nonzero: usize,
    pub passed: bool,
}

pub type Loss<'a, T> = dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var> + 'a;

/// Builds the f64 and double-double instances of one loss body for
/// [`check`].
#[macro_export]
macro_rules! gradcheck {
    ($name:expr, $inputs:expr, $opts:expr, |$t:ident, $v:ident| $body:expr) => {
        $crate::gradcheck::check(
            $name,
            $inputs,
            &|$t: &mut $crate::autodiff::Tape<f64>, $v: &[$crate::autodiff::Var]| $body,
            &|$t: &mut $crate::autodiff::Tape<$crate::dd::Dd>, $v: &[$crate::autodiff::Var]| $body,
            $opts,
        )
    };
}

/// Compares reverse-mode gradients of `loss` with central differences of
/// `reference` (the same function in double-double) for every entry of
/// every input.
pub fn check(
    component: &str,
    inputs: &[(String, Tensor<f64>)],
    loss: &Loss<'_, f64>,
    reference: &Loss<'_, Dd>,
    opts: &GradcheckOptions,
) -> Result<GradcheckResult> {
    let mut tape = Tape::new();
    if let Some(kind) = opts.fault.as_deref().and_then(OpKind::parse) {
        tape.inject_fault(kind);
    }
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("input gradient"))
        .collect();

    let eval = |values: &[Tensor<Dd>]| -> Result<Dd> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|x| t.constant(x.clone())).collect();
        let out = reference(&mut t, &vs)?;
        Ok(t.value(out).get(0, 0))
    };
    let mut values: Vec<Tensor<Dd>> = inputs.iter().map(|(_, t)| t.cast()).collect();
    let h = Dd::from_f64(opts.step);
    let mut worst = (0.0f64, String::new());
    let mut n_checked = 0;
    let n_nonzero = analytic.iter().flat_map(|g| g.data()).filter(|&&x| x != 0.0).count();
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + h;
            let plus = eval(&values)?;
            values[i].data_mut()[j] = orig - h;
            let minus = eval(&values)?;
            values[i].data_mut()[j] = orig;
            let numeric = ((plus - minus) / (h + h)).as_f64();
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
            if rel > worst.0 || !rel.is_finite() {
                worst = (rel, format!("{}[{j}]", inputs[i].0));
            }
            n_checked += 1;
        }
    }
    Ok(GradcheckResult {
        component: component.to_string(),
        max_rel_error: worst.0,
        worst: worst.1,
        n_checked,
        n_nonzero,
        passed: worst.0 < opts.tolerance,
    })
}

fn randn(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, for inputs to kinked ops.
fn away_from_zero(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| {
        let x: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            x
        } else {
            -x
        }
    })
}

fn random_graph(n: usize, rng: &mut impl Rng) -> Result<Arc<Csr>> {
    if n == 1 {
        return Ok(Arc::new(Csr::empty(1)));
    }
    let coords: Vec<[f32; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let k = 3.min(n - 1);
    Ok(Arc::new(knn_adjacency(
        &coords,
        &GraphConfig {
            k,
            ..GraphConfig::default()
        },
    )?))
}

/// `sum(out ∘ r)` for a fixed random `r`, so every output entry matters.
fn weighted_sum<T: Real>(tape: &mut Tape<T>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = tape.constant(r.cast());
    let prod = tape.mul(out, rv)?;
    Ok(tape.sum(prod))
}

/// Flattens a parameter container into named inputs.
fn named_inputs(prefix: &str, named: Vec<(String, &Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    named
        .into_iter()
        .map(|(n, t)| (format!("{prefix}{n}"), t.clone()))
        .collect()
}

/// Rebuilds a `Var`-slotted container from a template and a slice of vars
/// laid out in the template's `named` order.
fn rebind<P, Q>(template: &P, vars: &[Var], map: impl Fn(&P, &mut dyn FnMut(&Tensor<f64>) -> Var) -> Q) -> Q {
    let mut it = vars.iter().copied();
    map(template, &mut |_| it.next().expect("enough vars"))
}

fn op_checks(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GradcheckResult>> {
    let mut out = Vec::new();
    let a = randn(3, 4, rng);
    let b = randn(3, 4, rng);
    let r = randn(3, 4, rng);
    let two = |x: &Tensor<f64>, y: &Tensor<f64>| vec![("a".to_string(), x.clone()), ("b".to_string(), y.clone())];
    let one = |x: &Tensor<f64>| vec![("a".to_string(), x.clone())];

    out.push(gradcheck!("op:matmul", &two(&a, &randn(4, 2, rng)), opts, |t, v| {
        let m = t.matmul(v[0], v[1])?;
        let r = Tensor::from_fn(3, 2, |i, j| 0.3 + 0.2 * i as f64 - 0.1 * j as f64);
        weighted_sum(t, m, &r)
    })?);
    out.push(gradcheck!("op:add", &two(&a, &b), opts, |t, v| {
        let s = t.add(v[0], v[1])?;
        weighted_sum(t, s, &r)
    })?);
    out.push(gradcheck!("op:sub", &two(&a, &b), opts, |t, v| {
        let s = t.sub(v[0], v[1])?;
        weighted_sum(t, s, &r)
    })?);
    out.push(gradcheck!("op:mul", &two(&a, &b), opts, |t, v| {
        let s = t.mul(v[0], v[1])?;
        Ok(t.sum(s))
    })?);
    out.push(gradcheck!("op:scale", &one(&a), opts, |t, v| {
        let s = t.scale(v[0], Real::of(0.7));
        weighted_sum(t, s, &r)
    })?);
    out.push(gradcheck!("op:add_bias", &two(&a, &randn(1, 4, rng)), opts, |t, v| {
        let s = t.add_bias(v[0], v[1])?;
        weighted_sum(t, s, &r)
    })?);
    let kinked = away_from_zero(3, 4, rng);
    out.push(gradcheck!("op:relu", &one(&kinked), opts, |t, v| {
        let s = t.relu(v[0]);
        weighted_sum(t, s, &r)
    })?);
    out.push(gradcheck!("op:tanh", &one(&a), opts, |t, v| {
        let s = t.tanh(v[0]);
        weighted_sum(t, s, &r)
    })?);
    out.push(gradcheck!("op:exp", &one(&a), opts, |t, v| {
        let s = t.exp(v[0]);
        weighted_sum(t, s, &r)
    })?);
    out.push(gradcheck!("op:softmax_rows", &one(&a), opts, |t, v| {
        let s = t.softmax_rows(v[0]);
        weighted_sum(t, s, &r)
    })?);
    out.push(gradcheck!("op:transpose", &one(&a), opts, |t, v| {
        let s = t.transpose(v[0]);
        let rt = r.transpose();
        weighted_sum(t, s, &rt)
    })?);
    out.push(gradcheck!("op:slice_cols", &one(&a), opts, |t, v| {
        let s = t.slice_cols(v[0], 1, 2)?;
        let rs = r.slice_cols(0, 2)?;
        weighted_sum(t, s, &rs)
    })?);
    out.push(gradcheck!(
        "op:concat_cols",
        &two(&a, &b.slice_cols(0, 3)?),
        opts,
        |t, v| {
            let s = t.concat_cols(&[v[0], v[1]])?;
            let rc = Tensor::from_fn(3, 7, |i, j| 0.1 * (i + 2 * j) as f64 - 0.4);
            weighted_sum(t, s, &rc)
        }
    )?);
    out.push(gradcheck!("op:sum", &one(&a), opts, |t, v| Ok(t.sum(v[0])))?);
    out.push(gradcheck!(
        "op:cross_entropy",
        &one(&randn(1, 3, rng)),
        opts,
        |t, v| t.cross_entropy(v[0], 1)
    )?);
    for &n in &opts.sizes {
        let adj = random_graph(n, rng)?;
        let h = away_from_zero(n, 4, rng);
        let rn = randn(n, 4, rng);
        out.push(gradcheck!(
            &format!("op:neighbor_aggregate[N={n}]"),
            &one(&h),
            opts,
            |t, v| {
                let s = t.neighbor_aggregate(v[0], Arc::clone(&adj), Real::of(1.0), Real::of(1e-7))?;
                weighted_sum(t, s, &rn)
            }
        )?);
        let q = randn(n, 4, rng);
        let k = randn(n, 4, rng);
        let vv = randn(n, 4, rng);
        let inputs = vec![("q".to_string(), q), ("k".to_string(), k), ("v".to_string(), vv)];
        out.push(gradcheck!(
            &format!("op:flash_attention[N={n}]"),
            &inputs,
            opts,
            |t, v| {
                let s = t.flash_attention(v[0], v[1], v[2], 2, 2)?;
                weighted_sum(t, s, &rn)
            }
        )?);
    }
    Ok(out)
}

fn layer_checks(opts: &GradcheckOptions, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GradcheckResult>> {
    let (d, d_in, heads) = (opts.d, opts.d_in, opts.n_heads);
    let mut out = Vec::new();
    let adj = random_graph(n, rng)?;
    let x_in = randn(n, d_in, rng);
    let h = randn(n, d, rng);
    let r = randn(n, d, rng);
    let tag = |name: &str| format!("{name}[N={n}]");

    let lin = Linear::<Tensor<f64>>::init(d_in, d, rng);
    let mut inputs = vec![("h".to_string(), x_in.clone())];
    inputs.extend(named_inputs("", {
        let mut v = Vec::new();
        lin.named("input", &mut v);
        v
    }));
    out.push(gradcheck!(&tag("input-projection"), &inputs, opts, |t, v| {
        let p = rebind(&lin, &v[1..], |l, mut f| l.map(&mut f));
        let y = input_projection(t, v[0], &p)?;
        weighted_sum(t, y, &r)
    })?);

    let gcn = GenConvParams::<Tensor<f64>>::init(d, rng);
    let mut inputs = vec![("h".to_string(), h.clone())];
    inputs.extend(named_inputs("", {
        let mut v = Vec::new();
        gcn.named("gcn", &mut v);
        v
    }));
    out.push(gradcheck!(&tag("genconv"), &inputs, opts, |t, v| {
        let p = rebind(&gcn, &v[1..], |g, mut f| g.map(&mut f));
        let y = genconv_forward(t, v[0], &adj, &p)?;
        weighted_sum(t, y, &r)
    })?);

    let attn = AttentionParams::<Tensor<f64>>::init(d, heads, rng)?;
    let mut inputs = vec![("h".to_string(), h.clone())];
    inputs.extend(named_inputs("", {
        let mut v = Vec::new();
        attn.named("attn", &mut v);
        v
    }));
    out.push(gradcheck!(&tag("attention-naive"), &inputs, opts, |t, v| {
        let p = rebind(&attn, &v[1..], |a, mut f| a.map(&mut f));
        let y = attention_naive(t, v[0], &p)?;
        weighted_sum(t, y, &r)
    })?);
    out.push(gradcheck!(&tag("attention-tiled"), &inputs, opts, |t, v| {
        let p = rebind(&attn, &v[1..], |a, mut f| a.map(&mut f));
        let y = attention_tiled(t, v[0], &p, 2)?;
        weighted_sum(t, y, &r)
    })?);

    let block = GtiBlockParams::<Tensor<f64>>::init(d, heads, rng)?;
    let mut inputs = vec![("h".to_string(), h.clone())];
    inputs.extend(named_inputs("", {
        let mut v = Vec::new();
        block.named("block", &mut v);
        v
    }));
    for (mode, kernel) in [
        (BlockMode::Full, AttentionKernel::Tiled { block: 2 }),
        (BlockMode::Full, AttentionKernel::Naive),
    ] {
        let name = tag(&format!("gti-block/{}", kernel.label()));
        out.push(gradcheck!(&name, &inputs, opts, |t, v| {
            let p = rebind(&block, &v[1..], |b, mut f| b.map(&mut f));
            let y = gti_block_forward(t, v[0], &adj, &p, mode, kernel)?;
            weighted_sum(t, y, &r)
        })?);
    }

    let pool = PoolingParams::<Tensor<f64>>::init(d, 4, rng);
    let mut inputs = vec![("h".to_string(), h.clone())];
    inputs.extend(named_inputs("", {
        let mut v = Vec::new();
        pool.named("pool", &mut v);
        v
    }));
    let r_bag = randn(1, d, rng);
    let r_alpha = randn(n, 1, rng);
    out.push(gradcheck!(&tag("attention-pooling"), &inputs, opts, |t, v| {
        let p = rebind(&pool, &v[1..], |q, mut f| q.map(&mut f));
        let (bag, alpha) = attention_pool(t, v[0], &p)?;
        let a = weighted_sum(t, bag, &r_bag)?;
        let b = weighted_sum(t, alpha, &r_alpha)?;
        t.add(a, b)
    })?);
    Ok(out)
}

fn head_and_model_checks(opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<GradcheckResult>> {
    let d = opts.d;
    let mut out = Vec::new();
    let cls = ClassifierParams::<Tensor<f64>>::init(d, 3, rng);
    let mut inputs = vec![("h_bag".to_string(), randn(1, d, rng))];
    inputs.extend(named_inputs("", {
        let mut v = Vec::new();
        cls.named("classifier", &mut v);
        v
    }));
    out.push(gradcheck!("classifier", &inputs, opts, |t, v| {
        let p = rebind(&cls, &v[1..], |c, mut f| c.map(&mut f));
        let logits = classify(t, v[0], &p)?;
        t.cross_entropy(logits, 2)
    })?);

    let dims = ModelDims {
        d_in: opts.d_in,
        d,
        n_blocks: 2,
        n_heads: opts.n_heads,
        d_att: 4,
        n_classes: 3,
    };
    let mut model = IgtModel::<Tensor<f64>>::init(dims, rng.random())?;
    // Zero biases leave whole ReLU layers dead on small widths; the
    // classifier's narrow hidden layer gets the largest offset.
    for (name, bias) in model.named_mut() {
        let range = if name == "classifier.fc1.bias" {
            1.0..2.0
        } else {
            0.1..0.5
        };
        if name.ends_with(".bias") {
            *bias = Tensor::from_fn(bias.rows(), bias.cols(), |_, _| rng.random_range(range.clone()));
        }
    }
    let variants = [
        (BlockMode::Full, AttentionKernel::Tiled { block: 2 }),
        (BlockMode::Full, AttentionKernel::Naive),
        (BlockMode::NoAttn, AttentionKernel::Naive),
        (BlockMode::NoGcn, AttentionKernel::Tiled { block: 3 }),
    ];
    for &n in &opts.sizes {
        let adj = random_graph(n, rng)?;
        let r_logits = randn(1, 3, rng);
        // Redraw bags that silence the classifier's hidden layer, where only
        // the output bias would receive a gradient.
        let mut features = randn(n, opts.d_in, rng).scale(opts.feature_scale);
        for _ in 0..MAX_FIXTURE_DRAWS {
            let mut live = true;
            for &(mode, kernel) in &variants {
                live &= classifier_is_live(&model, &features, &adj, mode, kernel)?;
            }
            if live {
                break;
            }
            features = randn(n, opts.d_in, rng).scale(opts.feature_scale);
        }
        let mut inputs = vec![("features".to_string(), features)];
        inputs.extend(named_inputs("", model.named()));
        for (mode, kernel) in variants {
            let name = format!("full-model/{}/{}[N={n}]", mode.as_str(), kernel.label());
            out.push(gradcheck!(&name, &inputs, opts, |t, v| {
                let p = rebind(&model, &v[1..], |m, mut f| m.map(&mut f));
                let fwd = p.forward(t, v[0], &adj, mode, kernel)?;
                weighted_sum(t, fwd.logits, &r_logits)
            })?);
        }
    }
    Ok(out)
}

const MAX_FIXTURE_DRAWS: usize = 32;

fn classifier_is_live(
    model: &IgtModel<Tensor<f64>>,
    features: &Tensor<f64>,
    adj: &Arc<Csr>,
    mode: BlockMode,
    kernel: AttentionKernel,
) -> Result<bool> {
    let mut tape = Tape::new();
    let h = tape.constant(features.clone());
    let p = model.map(&mut |t| tape.constant(t.clone()));
    let fwd = p.forward(&mut tape, h, adj, mode, kernel)?;
    let fc1 = &model.classifier.fc1;
    let z = tape.value(fwd.embedding).matmul(&fc1.weight)?.add_row(&fc1.bias)?;
    Ok(z.data().iter().any(|&x| x > 0.0))
}

/// The full suite: primitive ops, each layer at each bag size, the
/// classifier, and the whole model under every mode.
pub fn run_suite(opts: &GradcheckOptions) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = op_checks(opts, &mut rng)?;
    for &n in &opts.sizes {
        out.extend(layer_checks(opts, n, &mut rng)?);
    }
    out.extend(head_and_model_checks(opts, &mut rng)?);
    Ok(out)
}
