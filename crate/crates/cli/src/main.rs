//! `igt`: dataset generation, training, evaluation, ablation, gradient
//! checking and attention benchmarking from the command line.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime or validation failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use igt_core::bench::{bench_attention, equivalence_tolerance, format_table, BenchRow};
use igt_core::data::Split;
use igt_core::gradcheck::{run_suite, GradcheckOptions, DEFAULT_TOLERANCE};
use igt_core::harness::{evaluate_checkpoint, train_dispatch};
use igt_core::layers::tiled_aux_elements;
use igt_core::{ablate, generate, BagDataset, IgtError, Precision, PreparedData, SynthSpec, SynthTask, TrainConfig};

const PRECISION_ENV: &str = "IGT_PRECISION";

#[derive(Parser, Debug)]
#[command(
    name = "igt",
    version,
    about = "Graph-transformer multiple-instance learning on bags of patch features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic bag dataset.
    GenData(GenDataArgs),
    /// Train one model and write its checkpoint and run record.
    Train(RunArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Train full, no-attn and no-gcn models and tabulate them.
    Ablate(RunArgs),
    /// Finite-difference gradient check of every layer and the full model.
    Gradcheck(GradcheckArgs),
    /// Compare naive and tiled attention: time, buffers and agreement.
    BenchAttn(BenchArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_parser = parse_task)]
    task: SynthTask,
    #[arg(long, default_value_t = 500)]
    bags: usize,
    /// Instance feature width.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    n_min: usize,
    #[arg(long, default_value_t = 256)]
    n_max: usize,
    /// Standard deviation of instance noise.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Flat `key = value` file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory or its manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Checkpoint file, or a directory holding `checkpoint.igt`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Where to write `eval_report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bag sizes to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 9])]
    sizes: Vec<usize>,
    /// Corrupt one op's backward rule (negative control).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024, 4096])]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    d: usize,
    /// Tile sizes; 0 means one tile covering the whole bag.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 128])]
    block_list: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    precision: Option<String>,
}

/// Failure split by exit code.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<IgtError> for Failure {
    fn from(e: IgtError) -> Self {
        match e {
            IgtError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn parse_task(s: &str) -> Result<SynthTask, String> {
    SynthTask::parse(s).map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (expected train, val or test)")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => run_ablation(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::BenchAttn(a) => bench_attn(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(path, text.as_bytes())
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let spec = SynthSpec {
        n_bags: a.bags,
        d_in: a.dim,
        seed: a.seed,
        n_min: a.n_min,
        n_max: a.n_max,
        noise: a.noise,
        ..SynthSpec::new(a.task)
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let ds = generate(&spec)?;
    let manifest = ds.write(&a.out)?;
    let positives = ds.bags.iter().filter(|b| b.label == 1).count();
    println!(
        "{}: {} bags ({} negative / {} positive), d_in {}, splits train/val/test {}/{}/{}, manifest {}",
        spec.task.as_str(),
        ds.bags.len(),
        ds.bags.len() - positives,
        positives,
        spec.d_in,
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len(),
        manifest.display()
    );
    Ok(())
}

/// Config file, then `IGT_PRECISION`, then flags.
fn resolve_config(a: &ConfigArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => TrainConfig::default(),
    };
    let usage = |e: IgtError| Failure::Usage(e.to_string());
    if let Ok(p) = std::env::var(PRECISION_ENV) {
        cfg.set("precision", &p)
            .map_err(|e| Failure::Usage(format!("{PRECISION_ENV}: {e}")))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v).map_err(usage)?;
    }
    let flags = [
        ("mode", a.mode.clone()),
        ("seed", a.seed.map(|s| s.to_string())),
        ("epochs", a.epochs.map(|e| e.to_string())),
        ("precision", a.precision.clone()),
        ("kernel", a.kernel.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(usage)?;
        }
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn load_data(a: &ConfigArgs, cfg: &TrainConfig) -> Result<PreparedData, Failure> {
    let manifest = if a.data.is_dir() {
        a.data.join("manifest.json")
    } else {
        a.data.clone()
    };
    let ds = BagDataset::open(&manifest)?;
    Ok(PreparedData::from_dataset(&ds, &cfg.graph_config())?)
}

fn prepare_out(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn train(a: RunArgs) -> CliResult {
    let cfg = resolve_config(&a.common)?;
    let data = load_data(&a.common, &cfg)?;
    prepare_out(&a.out)?;
    write_file(&a.out.join("config.txt"), cfg.to_text().as_bytes())?;
    let ckpt = a.out.join("checkpoint.igt");
    let record = train_dispatch(&cfg, &data, Some(&ckpt))?;
    write_json(&a.out.join("run_record.json"), &record)?;
    let auc = record.test.auroc.map_or("n/a".into(), |x| format!("{x:.4}"));
    println!(
        "mode {} seed {} precision {}: selected epoch {}, test accuracy {:.4}, AUROC {auc}, {} steps in {:.1}s",
        cfg.mode.as_str(),
        cfg.seed,
        cfg.precision.as_str(),
        record.selected_epoch,
        record.test.accuracy,
        record.optimizer_steps,
        record.wall_clock_secs
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let cfg = resolve_config(&a.common)?;
    let data = load_data(&a.common, &cfg)?;
    let ckpt = if a.checkpoint.is_dir() {
        a.checkpoint.join("checkpoint.igt")
    } else {
        a.checkpoint.clone()
    };
    let report = evaluate_checkpoint(&cfg, &ckpt, &data, a.split)?;
    let auc = report.auroc.map_or("n/a".into(), |x| format!("{x:.4}"));
    println!(
        "{:?} split: {} bags, accuracy {:.4}, AUROC {auc}",
        a.split, report.n_samples, report.accuracy
    );
    if let Some(out) = &a.out {
        prepare_out(out)?;
        write_json(&out.join("eval_report.json"), &report)?;
    }
    Ok(())
}

fn run_ablation(a: RunArgs) -> CliResult {
    let cfg = resolve_config(&a.common)?;
    let data = load_data(&a.common, &cfg)?;
    prepare_out(&a.out)?;
    let table = ablate(&cfg, &data)?;
    let text = table.to_text();
    write_file(&a.out.join("ablation.txt"), text.as_bytes())?;
    write_json(&a.out.join("ablation.json"), &table)?;
    print!("{text}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(Failure::Usage("--sizes must list positive bag sizes".into()));
    }
    if let Some(op) = &a.inject_fault {
        if igt_core::OpKind::parse(op).is_none() {
            return Err(Failure::Usage(format!("unknown op {op:?}")));
        }
    }
    let opts = GradcheckOptions {
        seed: a.seed,
        sizes: a.sizes,
        fault: a.inject_fault,
        ..GradcheckOptions::default()
    };
    let results = run_suite(&opts)?;
    let width = results.iter().map(|r| r.component.len()).max().unwrap_or(0);
    for r in &results {
        println!(
            "{:<width$}  {}  max rel error {:.3e} at {} ({} entries, {} nonzero)",
            r.component,
            if r.passed { "ok  " } else { "FAIL" },
            r.max_rel_error,
            r.worst,
            r.n_checked,
            r.n_nonzero
        );
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({:.3e})", r.component, r.max_rel_error))
        .collect();
    if failed.is_empty() {
        println!("all {} components below {DEFAULT_TOLERANCE:e}", results.len());
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

fn bench_attn(a: BenchArgs) -> CliResult {
    let precision = match a
        .precision
        .as_deref()
        .map(str::to_string)
        .or_else(|| std::env::var(PRECISION_ENV).ok())
    {
        Some(p) => Precision::parse(&p)?,
        None => Precision::F32,
    };
    if a.n_list.is_empty() || a.n_list.contains(&0) || a.d == 0 || a.heads == 0 || !a.d.is_multiple_of(a.heads) {
        return Err(Failure::Usage(
            "need positive --n-list and --d divisible by --heads".into(),
        ));
    }
    let (rows, tol) = match precision {
        Precision::F32 => (
            bench_attention::<f32>(&a.n_list, &a.block_list, a.d, a.heads, a.seed)?,
            equivalence_tolerance::<f32>(),
        ),
        Precision::F64 => (
            bench_attention::<f64>(&a.n_list, &a.block_list, a.d, a.heads, a.seed)?,
            equivalence_tolerance::<f64>(),
        ),
    };
    println!("precision {}, d {}, {} heads", precision.as_str(), a.d, a.heads);
    print!("{}", format_table(&rows));
    check_bench(&rows, a.d, a.heads, tol)
}

/// The footprint and agreement claims the benchmark exists to show.
fn check_bench(rows: &[BenchRow], d: usize, heads: usize, tol: f64) -> CliResult {
    let mut problems = Vec::new();
    for r in rows {
        if r.naive_weight_elements != r.n * r.n {
            problems.push(format!("N={}: naive buffer {} != N^2", r.n, r.naive_weight_elements));
        }
        if !(r.max_abs_deviation <= tol) {
            problems.push(format!(
                "N={} block={}: deviation {:.3e} > {tol:e}",
                r.n, r.block, r.max_abs_deviation
            ));
        }
        // Once N reaches the tile size the footprint stops depending on N.
        let cap = tiled_aux_elements(r.block, d, heads, r.block);
        let grows = if r.n >= r.block {
            r.tiled_aux_elements != cap
        } else {
            r.tiled_aux_elements > cap
        };
        if grows {
            problems.push(format!(
                "N={} block={}: tiled auxiliary footprint {} depends on N",
                r.n, r.block, r.tiled_aux_elements
            ));
        }
    }
    if problems.is_empty() {
        println!("tiled auxiliary footprint independent of N; all deviations within {tol:e}");
        Ok(())
    } else {
        Err(Failure::Runtime(problems.join("; ")))
    }
}
