//! The full model: input projection, a stack of GTI blocks, attention
//! pooling and the bag classifier.
//!
//! Parameter names (stable, used by checkpoints):
//!
//! | name | shape |
//! |------|-------|
//! | `input.weight`, `input.bias` | d_in×d, 1×d |
//! | `blocks.{l}.gcn.mlp{1,2}.{weight,bias}` | d×d, 1×d |
//! | `blocks.{l}.attn.w_{q,k,v,o}` | d×d |
//! | `pool.v`, `pool.w` | d×d_att, d_att×1 |
//! | `classifier.fc1.{weight,bias}` | d×d/2, 1×d/2 |
//! | `classifier.fc2.{weight,bias}` | d/2×C, 1×C |
//!
//! Every mode allocates and initialises every parameter in this order from
//! one seeded stream, so ablations start from identical weights.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{IgtError, Result};
use crate::graph::{Csr, WsiGraph};
use crate::layers::{gti_block_forward, input_projection, AttentionKernel, BlockMode, GtiBlockParams, Linear};
use crate::mil::{attention_pool, classify, ClassifierParams, PoolingParams};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_in: usize,
    pub d: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_att: usize,
    pub n_classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_in", self.d_in),
            ("d", self.d),
            ("n_heads", self.n_heads),
            ("d_att", self.d_att),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(IgtError::Config(format!("{name} must be positive")));
        }
        if self.n_classes < 2 {
            return Err(IgtError::Config("need at least two classes".into()));
        }
        if !self.d.is_multiple_of(self.n_heads) {
            return Err(IgtError::Config(format!(
                "d={} not divisible by n_heads={}",
                self.d, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IgtModel<P> {
    pub dims: ModelDims,
    pub input: Linear<P>,
    pub blocks: Vec<GtiBlockParams<P>>,
    pub pool: PoolingParams<P>,
    pub classifier: ClassifierParams<P>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardVars {
    pub logits: Var,
    pub alpha: Var,
    pub embedding: Var,
}

/// Grad-free result of running the model on one bag.
#[derive(Clone, Debug, PartialEq)]
pub struct BagOutput<T> {
    pub logits: Tensor<T>,
    pub alpha: Tensor<T>,
}

impl<P> IgtModel<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> IgtModel<Q> {
        IgtModel {
            dims: self.dims,
            input: self.input.map(f),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            pool: self.pool.map(f),
            classifier: self.classifier.map(f),
        }
    }

    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.input.named("input", &mut out);
        for (l, b) in self.blocks.iter().enumerate() {
            b.named(&format!("blocks.{l}"), &mut out);
        }
        self.pool.named("pool", &mut out);
        self.classifier.named("classifier", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut out = Vec::new();
        self.input.named_mut("input", &mut out);
        for (l, b) in self.blocks.iter_mut().enumerate() {
            b.named_mut(&format!("blocks.{l}"), &mut out);
        }
        self.pool.named_mut("pool", &mut out);
        self.classifier.named_mut("classifier", &mut out);
        out
    }
}

impl<T: Real> IgtModel<Tensor<T>> {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Linear::init(dims.d_in, dims.d, &mut rng);
        let blocks = (0..dims.n_blocks)
            .map(|_| GtiBlockParams::init(dims.d, dims.n_heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let pool = PoolingParams::init(dims.d, dims.d_att, &mut rng);
        let classifier = ClassifierParams::init(dims.d, dims.n_classes, &mut rng);
        Ok(IgtModel {
            dims,
            input,
            blocks,
            pool,
            classifier,
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Places every parameter on the tape, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> IgtModel<Var> {
        self.map(&mut |t| tape.leaf(t.clone(), trainable))
    }

    pub fn cast<U: Real>(&self) -> IgtModel<Tensor<U>> {
        self.map(&mut |t| t.cast())
    }

    /// Grad-free inference on one bag.
    pub fn predict(&self, graph: &WsiGraph<T>, mode: BlockMode, kernel: AttentionKernel) -> Result<BagOutput<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let h = tape.constant(graph.features.clone());
        let out = bound.forward(&mut tape, h, &graph.adjacency, mode, kernel)?;
        Ok(BagOutput {
            logits: tape.value(out.logits).clone(),
            alpha: tape.value(out.alpha).clone(),
        })
    }

    /// Cross-entropy loss, logits and per-parameter gradients (in
    /// [`IgtModel::named`] order) for one labelled bag.
    pub fn loss_and_grads(
        &self,
        graph: &WsiGraph<T>,
        mode: BlockMode,
        kernel: AttentionKernel,
    ) -> Result<(T, Tensor<T>, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let h = tape.constant(graph.features.clone());
        let out = bound.forward(&mut tape, h, &graph.adjacency, mode, kernel)?;
        let loss = tape.cross_entropy(out.logits, graph.label)?;
        tape.backward(loss)?;
        let vars: Vec<Var> = bound.named().into_iter().map(|(_, v)| *v).collect();
        let grads = vars
            .into_iter()
            .map(|v| tape.take_grad(v).expect("parameters require grad"))
            .collect();
        Ok((tape.value(loss).get(0, 0), tape.value(out.logits).clone(), grads))
    }

    /// Replaces parameter values from named tensors. Names and shapes must
    /// match exactly; every offending name is listed in the error.
    pub fn load_named(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut incoming: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        let mut problems = Vec::new();
        for (name, t) in entries {
            if incoming.insert(name.clone(), t).is_some() {
                problems.push(format!("{name} (duplicate)"));
            }
        }
        let mut slots = self.named_mut();
        for (name, slot) in slots.iter_mut() {
            match incoming.remove(name.as_str()) {
                None => problems.push(format!("{name} (missing)")),
                Some(t) if t.shape() != slot.shape() => {
                    problems.push(format!("{name} (shape {:?}, expected {:?})", t.shape(), slot.shape()))
                }
                Some(t) => **slot = t,
            }
        }
        problems.extend(incoming.keys().map(|k| format!("{k} (unexpected)")));
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IgtError::Load(problems.join(", ")))
        }
    }
}

impl IgtModel<Var> {
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        h: Var,
        adj: &Arc<Csr>,
        mode: BlockMode,
        kernel: AttentionKernel,
    ) -> Result<ForwardVars> {
        let mut x = input_projection(tape, h, &self.input)?;
        for block in &self.blocks {
            x = gti_block_forward(tape, x, adj, block, mode, kernel)?;
        }
        let (h_bag, alpha) = attention_pool(tape, x, &self.pool)?;
        let logits = classify(tape, h_bag, &self.classifier)?;
        Ok(ForwardVars {
            logits,
            alpha,
            embedding: h_bag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphConfig};

    fn dims() -> ModelDims {
        ModelDims {
            d_in: 5,
            d: 8,
            n_blocks: 2,
            n_heads: 2,
            d_att: 4,
            n_classes: 3,
        }
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let m = IgtModel::<Tensor<f64>>::init(dims(), 0).unwrap();
        let names: Vec<String> = m.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "input.weight");
        assert_eq!(names[2], "blocks.0.gcn.mlp1.weight");
        assert_eq!(names[6], "blocks.0.attn.w_q");
        assert_eq!(names.last().unwrap(), "classifier.fc2.bias");
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn init_is_seeded() {
        let a = IgtModel::<Tensor<f64>>::init(dims(), 4).unwrap();
        assert_eq!(a, IgtModel::init(dims(), 4).unwrap());
        assert_ne!(a, IgtModel::init(dims(), 5).unwrap());
    }

    #[test]
    fn no_gcn_equals_full_with_silenced_gcn_output() {
        let mut m = IgtModel::<Tensor<f64>>::init(dims(), 1).unwrap();
        let coords: Vec<[f32; 2]> = (0..10).map(|i| [(i % 4) as f32, (i / 4) as f32]).collect();
        let feats = Tensor::from_fn(10, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let g = build_graph(
            feats,
            coords,
            1,
            &GraphConfig {
                k: 3,
                ..GraphConfig::default()
            },
            "b",
        )
        .unwrap();
        let ablated = m.predict(&g, BlockMode::NoGcn, AttentionKernel::Naive).unwrap();
        for b in &mut m.blocks {
            b.gcn.mlp2.weight = Tensor::zeros(8, 8);
            b.gcn.mlp2.bias = Tensor::zeros(1, 8);
        }
        let silenced = m.predict(&g, BlockMode::Full, AttentionKernel::Naive).unwrap();
        assert!(ablated.logits.max_abs_diff(&silenced.logits) < 1e-14);
    }

    #[test]
    fn load_reports_every_offending_name() {
        let mut m = IgtModel::<Tensor<f64>>::init(dims(), 0).unwrap();
        let mut entries: Vec<(String, Tensor<f64>)> = m.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        entries.retain(|(n, _)| n != "pool.w");
        entries[0].1 = Tensor::zeros(1, 1);
        entries.push(("bogus".into(), Tensor::zeros(1, 1)));
        let msg = m.load_named(entries).unwrap_err().to_string();
        assert!(msg.contains("pool.w (missing)"), "{msg}");
        assert!(msg.contains("input.weight (shape"), "{msg}");
        assert!(msg.contains("bogus (unexpected)"), "{msg}");
    }
}
