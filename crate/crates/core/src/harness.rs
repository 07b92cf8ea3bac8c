//! Training, evaluation and ablation runs.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{Bag, BagDataset, GeneratedDataset, Split, Splits};
use crate::error::{IgtError, Result};
use crate::graph::{knn_adjacency, knn_adjacency_features, Csr, GraphConfig, NeighborSpace, WsiGraph};
use crate::layers::genconv::{DEFAULT_BETA, DEFAULT_EPSILON};
use crate::layers::{AttentionKernel, BlockMode};
use crate::metrics::EvalReport;
use crate::mil::DEFAULT_ATTENTION_DIM;
use crate::model::{IgtModel, ModelDims};
use crate::optim::{LrSchedule, RAdamConfig, RAdamState};
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    /// Input width; `None` takes it from the dataset.
    pub d_in: Option<usize>,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_att: usize,
    pub k: usize,
    pub neighbor_space: NeighborSpace,
    pub mode: BlockMode,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub optimizer: RAdamConfig,
    pub gcn_beta: f64,
    pub gcn_epsilon: f64,
    pub seed: u64,
    pub precision: Precision,
    pub kernel: AttentionKernel,
    pub repeats: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 256,
            d_in: None,
            n_blocks: 2,
            n_heads: 8,
            d_att: DEFAULT_ATTENTION_DIM,
            k: 8,
            neighbor_space: NeighborSpace::Spatial,
            mode: BlockMode::Full,
            epochs: 40,
            schedule: LrSchedule::default(),
            optimizer: RAdamConfig::default(),
            gcn_beta: DEFAULT_BETA,
            gcn_epsilon: DEFAULT_EPSILON,
            seed: 0,
            precision: Precision::F32,
            kernel: AttentionKernel::Tiled { block: 64 },
            repeats: 3,
            batch_size: 1,
        }
    }
}

/// Keys of the flat `key = value` config format, in emission order.
pub const CONFIG_KEYS: [&str; 23] = [
    "d",
    "d_in",
    "n_blocks",
    "n_heads",
    "d_att",
    "k",
    "neighbor_space",
    "mode",
    "epochs",
    "lr_initial",
    "lr_decayed",
    "decay_epoch",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "gcn_beta",
    "gcn_epsilon",
    "seed",
    "precision",
    "kernel",
    "repeats",
    "batch_size",
];

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse()
        .map_err(|_| IgtError::Config(format!("invalid value {v:?} for {key}")))
}

impl TrainConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "d" => self.d = parse_num(key, v)?,
            "d_in" => self.d_in = if v == "auto" { None } else { Some(parse_num(key, v)?) },
            "n_blocks" => self.n_blocks = parse_num(key, v)?,
            "n_heads" => self.n_heads = parse_num(key, v)?,
            "d_att" => self.d_att = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "neighbor_space" => {
                self.neighbor_space = match v {
                    "spatial" => NeighborSpace::Spatial,
                    "feature" => NeighborSpace::Feature,
                    _ => return Err(IgtError::Config(format!("invalid value {v:?} for {key}"))),
                }
            }
            "mode" => self.mode = BlockMode::parse(v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "lr_initial" => self.schedule.initial = parse_num(key, v)?,
            "lr_decayed" => self.schedule.decayed = parse_num(key, v)?,
            "decay_epoch" => self.schedule.decay_epoch = parse_num(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = parse_num(key, v)?,
            "beta1" => self.optimizer.beta1 = parse_num(key, v)?,
            "beta2" => self.optimizer.beta2 = parse_num(key, v)?,
            "adam_eps" => self.optimizer.eps = parse_num(key, v)?,
            "gcn_beta" => self.gcn_beta = parse_num(key, v)?,
            "gcn_epsilon" => self.gcn_epsilon = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "precision" => self.precision = Precision::parse(v)?,
            "kernel" => self.kernel = AttentionKernel::parse(v)?,
            "repeats" => self.repeats = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            _ => return Err(IgtError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "d" => self.d.to_string(),
            "d_in" => self.d_in.map_or("auto".into(), |v| v.to_string()),
            "n_blocks" => self.n_blocks.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "d_att" => self.d_att.to_string(),
            "k" => self.k.to_string(),
            "neighbor_space" => match self.neighbor_space {
                NeighborSpace::Spatial => "spatial".into(),
                NeighborSpace::Feature => "feature".into(),
            },
            "mode" => self.mode.as_str().into(),
            "epochs" => self.epochs.to_string(),
            "lr_initial" => self.schedule.initial.to_string(),
            "lr_decayed" => self.schedule.decayed.to_string(),
            "decay_epoch" => self.schedule.decay_epoch.to_string(),
            "weight_decay" => self.optimizer.weight_decay.to_string(),
            "beta1" => self.optimizer.beta1.to_string(),
            "beta2" => self.optimizer.beta2.to_string(),
            "adam_eps" => self.optimizer.eps.to_string(),
            "gcn_beta" => self.gcn_beta.to_string(),
            "gcn_epsilon" => self.gcn_epsilon.to_string(),
            "seed" => self.seed.to_string(),
            "precision" => self.precision.as_str().into(),
            "kernel" => self.kernel.label(),
            "repeats" => self.repeats.to_string(),
            "batch_size" => self.batch_size.to_string(),
            _ => String::new(),
        }
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: IgtError| match e {
                IgtError::Config(m) => IgtError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| IgtError::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(IgtError::Config(format!("duplicate key {key:?}"))));
            }
            cfg.set(key, value).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(IgtError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| IgtError::io(path, e))?;
        Self::parse(&text)
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(IgtError::Config(m));
        for (name, v) in [
            ("d", self.d),
            ("n_heads", self.n_heads),
            ("d_att", self.d_att),
            ("k", self.k),
            ("epochs", self.epochs),
            ("repeats", self.repeats),
            ("n_blocks", self.n_blocks),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.d_in == Some(0) {
            return fail("d_in must be positive".into());
        }
        if self.batch_size != 1 {
            return fail(format!("batch_size is fixed at 1, got {}", self.batch_size));
        }
        if !self.d.is_multiple_of(self.n_heads) {
            return fail(format!("d={} not divisible by n_heads={}", self.d, self.n_heads));
        }
        if !(self.schedule.initial > 0.0 && self.schedule.decayed > 0.0) {
            return fail("learning rates must be positive".into());
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 || o.weight_decay < 0.0 {
            return fail("invalid optimizer settings".into());
        }
        if !(self.gcn_epsilon > 0.0 && self.gcn_beta.is_finite()) {
            return fail("gcn_epsilon must be positive and gcn_beta finite".into());
        }
        if let AttentionKernel::Tiled { block: 0 } = self.kernel {
            return fail("tile size must be positive".into());
        }
        Ok(())
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            symmetrize: true,
            space: self.neighbor_space,
        }
    }

    pub fn dims(&self, d_in: usize, n_classes: usize) -> Result<ModelDims> {
        if let Some(want) = self.d_in {
            if want != d_in {
                return Err(IgtError::Config(format!("config d_in={want} but data has d_in={d_in}")));
            }
        }
        let dims = ModelDims {
            d_in,
            d: self.d,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
            d_att: self.d_att,
            n_classes,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// Fresh model with this config's GENConv constants.
    pub fn init_model<T: Real>(&self, dims: ModelDims, seed: u64) -> Result<IgtModel<Tensor<T>>> {
        let mut model = IgtModel::init(dims, seed)?;
        for b in &mut model.blocks {
            b.gcn.beta = self.gcn_beta;
            b.gcn.eps = self.gcn_epsilon;
        }
        Ok(model)
    }
}

/// A bag with its adjacency already built. Adjacency does not depend on
/// precision, so it is shared across runs.
#[derive(Clone, Debug)]
pub struct PreparedBag {
    pub name: String,
    pub bag: Bag,
    pub adjacency: Arc<Csr>,
}

impl PreparedBag {
    pub fn new(name: String, bag: Bag, cfg: &GraphConfig) -> Result<Self> {
        let n = bag.n_instances();
        let adjacency = if n == 1 {
            Csr::empty(1)
        } else {
            match cfg.space {
                NeighborSpace::Spatial => knn_adjacency(&bag.coords, cfg),
                NeighborSpace::Feature => knn_adjacency_features(&bag.features, cfg),
            }
            .map_err(|e| match e {
                IgtError::Config(m) => IgtError::Config(format!("bag {name}: {m}")),
                other => other,
            })?
        };
        Ok(PreparedBag {
            name,
            bag,
            adjacency: Arc::new(adjacency),
        })
    }

    pub fn graph<T: Real>(&self) -> WsiGraph<T> {
        WsiGraph {
            features: self.bag.features.cast(),
            coords: self.bag.coords.clone(),
            adjacency: Arc::clone(&self.adjacency),
            label: self.bag.label,
        }
    }
}

/// All three splits, graphs built.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub class_names: Vec<String>,
    pub d_in: usize,
    pub splits: Splits<PreparedBag>,
}

impl PreparedData {
    pub fn from_dataset(ds: &BagDataset, cfg: &GraphConfig) -> Result<Self> {
        let load = |s: Split| -> Result<Vec<PreparedBag>> {
            ds.load_split(s)?
                .into_par_iter()
                .map(|(name, bag)| PreparedBag::new(name, bag, cfg))
                .collect()
        };
        Ok(PreparedData {
            class_names: ds.manifest.class_names.clone(),
            d_in: ds.manifest.d_in,
            splits: Splits {
                train: load(Split::Train)?,
                val: load(Split::Val)?,
                test: load(Split::Test)?,
            },
        })
    }

    pub fn from_generated(g: &GeneratedDataset, cfg: &GraphConfig) -> Result<Self> {
        let take = |idx: &[usize]| -> Result<Vec<PreparedBag>> {
            idx.par_iter()
                .map(|&i| PreparedBag::new(format!("bag_{i:05}"), g.bags[i].clone(), cfg))
                .collect()
        };
        Ok(PreparedData {
            class_names: g.class_names.clone(),
            d_in: g.spec.d_in,
            splits: Splits {
                train: take(&g.splits.train)?,
                val: take(&g.splits.val)?,
                test: take(&g.splits.test)?,
            },
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn check(&self) -> Result<()> {
        for s in Split::ALL {
            if self.splits.get(s).is_empty() {
                return Err(IgtError::Config(format!("split {s:?} is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_auroc: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub mode: BlockMode,
    pub seed: u64,
    pub precision: Precision,
    pub optimizer_steps: u64,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub test: EvalReport,
    /// Excluded from equality.
    pub wall_clock_secs: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.config_hash == other.config_hash
            && self.mode == other.mode
            && self.seed == other.seed
            && self.precision == other.precision
            && self.optimizer_steps == other.optimizer_steps
            && self.epochs == other.epochs
            && self.selected_epoch == other.selected_epoch
            && self.test == other.test
    }
}

pub struct TrainOutcome<T> {
    pub record: RunRecord,
    /// Parameters from the selected epoch.
    pub model: IgtModel<Tensor<T>>,
}

/// Index of the first maximum.
pub fn select_epoch(val_accuracy: &[f64]) -> usize {
    crate::metrics::argmax(val_accuracy)
}

/// Class probabilities for every bag, one row per bag.
pub fn predict_probs<T: Real>(
    model: &IgtModel<Tensor<T>>,
    bags: &[PreparedBag],
    mode: BlockMode,
    kernel: AttentionKernel,
) -> Result<Tensor<T>> {
    let rows = bags
        .iter()
        .map(|b| {
            let out = model.predict(&b.graph::<T>(), mode, kernel)?;
            Ok(out.logits.softmax_rows().into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

pub fn evaluate<T: Real>(
    model: &IgtModel<Tensor<T>>,
    bags: &[PreparedBag],
    mode: BlockMode,
    kernel: AttentionKernel,
) -> Result<EvalReport> {
    let probs = predict_probs(model, bags, mode, kernel)?;
    let labels: Vec<usize> = bags.iter().map(|b| b.bag.label).collect();
    EvalReport::from_probs(&probs, &labels)
}

/// Trains with batch size 1: bags are visited in a seeded shuffle each
/// epoch, with one optimizer step per bag. The epoch with the best
/// validation accuracy (earliest on ties) is kept and scored on test.
pub fn train<T: Real>(cfg: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    data.check()?;
    let started = Instant::now();
    let dims = cfg.dims(data.d_in, data.n_classes())?;
    let mut model = cfg.init_model::<T>(dims, cfg.seed)?;
    let mut opt = RAdamState::new(cfg.optimizer, model.named().into_iter().map(|(_, t)| t));
    let train_graphs: Vec<WsiGraph<T>> = data.splits.train.iter().map(PreparedBag::graph).collect();
    let mut order: Vec<usize> = (0..train_graphs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, IgtModel<Tensor<T>>)> = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, _, grads) = model.loss_and_grads(&train_graphs[i], cfg.mode, cfg.kernel)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(IgtError::Training(format!(
                    "non-finite loss at epoch {epoch}, bag {}",
                    data.splits.train[i].name
                )));
            }
            total += loss;
            opt.step(&mut model.named_mut(), &grads, lr)
                .map_err(|e| IgtError::Training(format!("epoch {epoch}, bag {}: {e}", data.splits.train[i].name)))?;
        }
        let val = evaluate(&model, &data.splits.val, cfg.mode, cfg.kernel)?;
        if best.as_ref().is_none_or(|(acc, _)| val.accuracy > *acc) {
            best = Some((val.accuracy, model.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: total / order.len() as f64,
            val_accuracy: val.accuracy,
            val_auroc: val.auroc,
        });
    }
    let (_, best_model) = best.expect("at least one epoch");
    let selected_epoch = select_epoch(&epochs.iter().map(|e| e.val_accuracy).collect::<Vec<_>>());
    let test = evaluate(&best_model, &data.splits.test, cfg.mode, cfg.kernel)?;
    Ok(TrainOutcome {
        record: RunRecord {
            config_hash: cfg.hash(),
            mode: cfg.mode,
            seed: cfg.seed,
            precision: cfg.precision,
            optimizer_steps: opt.t,
            epochs,
            selected_epoch,
            test,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        model: best_model,
    })
}

/// [`train`] at the configured precision, returning the record and the
/// selected parameters as named tensors ready for a checkpoint.
pub fn train_dispatch(cfg: &TrainConfig, data: &PreparedData, checkpoint_path: Option<&Path>) -> Result<RunRecord> {
    fn go<T: Real>(cfg: &TrainConfig, data: &PreparedData, path: Option<&Path>) -> Result<RunRecord> {
        let out = train::<T>(cfg, data)?;
        if let Some(p) = path {
            checkpoint::save(p, &out.model.named())?;
        }
        Ok(out.record)
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, data, checkpoint_path),
        Precision::F64 => go::<f64>(cfg, data, checkpoint_path),
    }
}

/// Loads a checkpoint into a model shaped by `cfg` and scores one split.
pub fn evaluate_checkpoint(cfg: &TrainConfig, path: &Path, data: &PreparedData, split: Split) -> Result<EvalReport> {
    fn go<T: Real>(cfg: &TrainConfig, path: &Path, data: &PreparedData, split: Split) -> Result<EvalReport> {
        let dims = cfg.dims(data.d_in, data.n_classes())?;
        let mut model = cfg.init_model::<T>(dims, cfg.seed)?;
        model.load_named(checkpoint::load(path)?)?;
        evaluate(&model, data.splits.get(split), cfg.mode, cfg.kernel)
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, path, data, split),
        Precision::F64 => go::<f64>(cfg, path, data, split),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: BlockMode,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub mean_auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub records: Vec<RunRecord>,
}

impl AblationTable {
    pub fn row(&self, mode: BlockMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>8}  {}\n", "mode", "ACC", "AUROC", "per-seed ACC");
        for r in &self.rows {
            let auc = r.mean_auroc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
            let per: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.4}")).collect();
            let _ = writeln!(
                out,
                "{:<10} {:>8.4} {:>8}  {}",
                r.mode.as_str(),
                r.mean_accuracy,
                auc,
                per.join(" ")
            );
        }
        out
    }
}

/// Runs full, no-attn and no-gcn, each `cfg.repeats` times with seeds
/// `cfg.seed + r`. All modes share data order and initial weights.
pub fn ablate(cfg: &TrainConfig, data: &PreparedData) -> Result<AblationTable> {
    let modes = [BlockMode::Full, BlockMode::NoAttn, BlockMode::NoGcn];
    let jobs: Vec<TrainConfig> = modes
        .iter()
        .flat_map(|&mode| {
            (0..cfg.repeats).map(move |r| TrainConfig {
                mode,
                seed: cfg.seed + r as u64,
                ..cfg.clone()
            })
        })
        .collect();
    let records = jobs
        .par_iter()
        .map(|c| train_dispatch(c, data, None))
        .collect::<Result<Vec<_>>>()?;
    let rows = modes
        .iter()
        .map(|&mode| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.mode == mode).collect();
            let accuracies: Vec<f64> = runs.iter().map(|r| r.test.accuracy).collect();
            let aucs: Vec<f64> = runs.iter().filter_map(|r| r.test.auroc).collect();
            AblationRow {
                mode,
                mean_accuracy: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
                mean_auroc: (aucs.len() == runs.len()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
                accuracies,
            }
        })
        .collect();
    Ok(AblationTable { rows, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_identity() {
        let cfg = TrainConfig {
            d_in: Some(12),
            mode: BlockMode::NoGcn,
            kernel: AttentionKernel::Tiled { block: 7 },
            seed: 99,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let text = cfg.to_text();
        assert_eq!(TrainConfig::parse(&text).unwrap(), cfg);
        assert_eq!(TrainConfig::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = TrainConfig::parse("d = 64\n\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
        let err = TrainConfig::parse("# c\nepochs = many").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("epochs"), "{err}");
        let err = TrainConfig::parse("seed = 1\nseed = 2").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(TrainConfig::parse("batch_size = 4").is_err());
        assert!(TrainConfig::parse("d 64").unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn selection_prefers_earliest_best() {
        assert_eq!(select_epoch(&[0.5, 0.8, 0.8, 0.7]), 1);
        assert_eq!(select_epoch(&[0.9]), 0);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), b.hash());
    }
}
