//! Datasets: bag files on disk, the JSON manifest that indexes them, and
//! the synthetic generators.

pub mod bagfile;
pub mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IgtError, Result};
pub use bagfile::{read_bag, write_bag, Bag};
pub use synth::{generate, GeneratedDataset, InstanceKind, SynthSpec, SynthTask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn get(&self, s: Split) -> &[T] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Manifest paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub d_in: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub splits: Splits<String>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(IgtError::Config("manifest needs at least two class names".into()));
        }
        let mut seen = BTreeSet::new();
        for s in Split::ALL {
            for p in self.splits.get(s) {
                if !seen.insert(p) {
                    return Err(IgtError::Config(format!("bag {p} appears in more than one split")));
                }
            }
        }
        Ok(())
    }
}

/// A manifest together with the directory its paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct BagDataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl BagDataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        if !manifest_path.exists() {
            return Err(IgtError::MissingFile(manifest_path.to_path_buf()));
        }
        let text = std::fs::read_to_string(manifest_path).map_err(|e| IgtError::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(BagDataset { root, manifest })
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Reads and checks every bag of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<(String, Bag)>> {
        self.manifest
            .splits
            .get(split)
            .iter()
            .map(|rel| {
                let path = self.path_of(rel);
                let bag = read_bag(&path)?;
                let source = path.display().to_string();
                if bag.d_in() != self.manifest.d_in {
                    return Err(IgtError::Ingestion {
                        source_name: source,
                        offset: 8,
                        message: format!("d_in {} differs from manifest d_in {}", bag.d_in(), self.manifest.d_in),
                    });
                }
                if bag.label >= self.n_classes() {
                    return Err(IgtError::Ingestion {
                        source_name: source,
                        offset: 12,
                        message: format!("label {} but only {} classes", bag.label, self.n_classes()),
                    });
                }
                Ok((rel.clone(), bag))
            })
            .collect()
    }
}

/// Writes every bag under `dir/bags/` and a `manifest.json` indexing them.
/// Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    bags: &[Bag],
    splits: &Splits<usize>,
    class_names: &[String],
    task: Option<&str>,
) -> Result<PathBuf> {
    let bag_dir = dir.join("bags");
    std::fs::create_dir_all(&bag_dir).map_err(|e| IgtError::io(&bag_dir, e))?;
    let d_in = bags.first().map_or(0, Bag::d_in);
    let rel = |i: usize| format!("bags/bag_{i:05}.igtb");
    for (i, bag) in bags.iter().enumerate() {
        write_bag(&dir.join(rel(i)), bag)?;
    }
    let map = |v: &[usize]| v.iter().map(|&i| rel(i)).collect::<Vec<_>>();
    let manifest = Manifest {
        class_names: class_names.to_vec(),
        d_in,
        task: task.map(str::to_string),
        splits: Splits {
            train: map(&splits.train),
            val: map(&splits.val),
            test: map(&splits.test),
        },
    };
    manifest.validate()?;
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| IgtError::io(&path, e))?;
    Ok(path)
}
