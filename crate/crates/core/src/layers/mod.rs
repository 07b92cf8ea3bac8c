//! Model layers: input projection, GENConv message passing, global
//! multi-head attention and the GTI block that sums the two branches.
//!
//! Parameter containers are generic over the slot type `P`: `Tensor<T>`
//! for stored weights and [`Var`] once bound to a tape.

pub mod attention;
pub mod genconv;
pub mod gti;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{IgtError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub use attention::{
    attention_naive, attention_naive_values, attention_tiled, attention_tiled_values, attention_weights,
    tiled_aux_elements, AttentionParams,
};
pub use genconv::{genconv_forward, neighbor_weights, GenConvParams};
pub use gti::{gti_block_forward, GtiBlockParams};

/// Which branches of a GTI block are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockMode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-attn")]
    NoAttn,
    #[serde(rename = "no-gcn")]
    NoGcn,
}

impl BlockMode {
    pub const ALL: [BlockMode; 3] = [BlockMode::Full, BlockMode::NoAttn, BlockMode::NoGcn];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(BlockMode::Full),
            "no-attn" => Ok(BlockMode::NoAttn),
            "no-gcn" => Ok(BlockMode::NoGcn),
            other => Err(IgtError::Config(format!(
                "unknown block mode '{other}' (expected full, no-attn or no-gcn)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockMode::Full => "full",
            BlockMode::NoAttn => "no-attn",
            BlockMode::NoGcn => "no-gcn",
        }
    }

    pub fn uses_gcn(self) -> bool {
        self != BlockMode::NoGcn
    }

    pub fn uses_attention(self) -> bool {
        self != BlockMode::NoAttn
    }
}

/// Attention implementation; both compute the same exact attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttentionKernel {
    Naive,
    Tiled { block: usize },
}

impl AttentionKernel {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "naive" {
            return Ok(AttentionKernel::Naive);
        }
        if s == "tiled" {
            return Ok(AttentionKernel::Tiled { block: 64 });
        }
        if let Some(b) = s.strip_prefix("tiled:") {
            let block: usize = b
                .parse()
                .map_err(|_| IgtError::Config(format!("bad tile size in '{s}'")))?;
            if block == 0 {
                return Err(IgtError::Config("tile size must be >= 1".into()));
            }
            return Ok(AttentionKernel::Tiled { block });
        }
        Err(IgtError::Config(format!(
            "unknown attention kernel '{s}' (expected naive, tiled or tiled:<block>)"
        )))
    }

    pub fn label(&self) -> String {
        match self {
            AttentionKernel::Naive => "naive".into(),
            AttentionKernel::Tiled { block } => format!("tiled:{block}"),
        }
    }
}

/// Affine map `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

impl<T: Real> Linear<Tensor<T>> {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: xavier_uniform(fan_in, fan_out, rng),
            bias: Tensor::zeros(1, fan_out),
        }
    }
}

impl<P> Linear<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

impl Linear<Var> {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add_bias(xw, self.bias)
    }
}

/// Uniform in ±√(6 / (fan_in + fan_out)).
pub fn xavier_uniform<T: Real>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| T::of(rng.random_range(-bound..bound)))
}

/// `ReLU(h W + b)`: maps raw instance features to the model width.
pub fn input_projection<T: Real>(tape: &mut Tape<T>, h: Var, lin: &Linear<Var>) -> Result<Var> {
    let z = lin.forward(tape, h)?;
    Ok(tape.relu(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn project(h: &Tensor<f64>, lin: &Linear<Tensor<f64>>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let bound = lin.map(&mut |t| tape.constant(t.clone()));
        let out = input_projection(&mut tape, hv, &bound).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn identity_projection_passes_nonnegative_input() {
        let h = Tensor::from_fn(5, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let lin = Linear {
            weight: Tensor::identity(4),
            bias: Tensor::zeros(1, 4),
        };
        assert_eq!(project(&h, &lin), h);
    }

    #[test]
    fn zero_projection_is_zero() {
        let h = Tensor::from_fn(3, 4, |i, j| i as f64 - j as f64);
        let lin = Linear {
            weight: Tensor::zeros(4, 6),
            bias: Tensor::zeros(1, 6),
        };
        assert_eq!(project(&h, &lin), Tensor::zeros(3, 6));
    }

    #[test]
    fn projection_matches_matmul_relu_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Tensor<f64> = Tensor::from_fn(6, 5, |_, _| rng.random_range(-1.0..1.0));
        let mut lin = Linear::<Tensor<f64>>::init(5, 7, &mut rng);
        lin.bias = Tensor::from_fn(1, 7, |_, _| rng.random_range(-0.5..0.5));
        let mut expect = Tensor::zeros(6, 7);
        for i in 0..6 {
            for j in 0..7 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += h.get(i, p) * lin.weight.get(p, j);
                }
                expect.set(i, j, (s + lin.bias.get(0, j)).max(0.0));
            }
        }
        assert_eq!(project(&h, &lin), expect);
    }

    #[test]
    fn mode_and_kernel_parsing() {
        for m in BlockMode::ALL {
            assert_eq!(BlockMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(BlockMode::parse("half").is_err());
        assert_eq!(
            AttentionKernel::parse("tiled:16").unwrap(),
            AttentionKernel::Tiled { block: 16 }
        );
        assert!(AttentionKernel::parse("tiled:0").is_err());
        assert!(AttentionKernel::parse("sparse").is_err());
    }

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Tensor<f64> = xavier_uniform(10, 20, &mut rng);
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() < bound));
    }
}
