//! Bag-level head: attention-based MIL pooling, a two-layer classifier
//! and the cross-entropy loss.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::layers::{xavier_uniform, Linear};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_ATTENTION_DIM: usize = 128;

/// Non-gated attention scorer: `score_i = w ᵀ tanh(V ᵀ h_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingParams<P> {
    pub v: P,
    pub w: P,
}

impl<T: Real> PoolingParams<Tensor<T>> {
    pub fn init(d: usize, d_att: usize, rng: &mut impl Rng) -> Self {
        PoolingParams {
            v: xavier_uniform(d, d_att, rng),
            w: xavier_uniform(d_att, 1, rng),
        }
    }
}

impl<P> PoolingParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> PoolingParams<Q> {
        PoolingParams {
            v: f(&self.v),
            w: f(&self.w),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        out.push((format!("{prefix}.v"), &self.v));
        out.push((format!("{prefix}.w"), &self.w));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        out.push((format!("{prefix}.v"), &mut self.v));
        out.push((format!("{prefix}.w"), &mut self.w));
    }
}

/// `d → d/2 → C` with a ReLU in between; emits raw logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<P> {
    pub fc1: Linear<P>,
    pub fc2: Linear<P>,
}

impl<T: Real> ClassifierParams<Tensor<T>> {
    pub fn init(d: usize, n_classes: usize, rng: &mut impl Rng) -> Self {
        let hidden = (d / 2).max(1);
        ClassifierParams {
            fc1: Linear::init(d, hidden, rng),
            fc2: Linear::init(hidden, n_classes, rng),
        }
    }
}

impl<P> ClassifierParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ClassifierParams<Q> {
        ClassifierParams {
            fc1: self.fc1.map(f),
            fc2: self.fc2.map(f),
        }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        self.fc1.named(&format!("{prefix}.fc1"), out);
        self.fc2.named(&format!("{prefix}.fc2"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        self.fc1.named_mut(&format!("{prefix}.fc1"), out);
        self.fc2.named_mut(&format!("{prefix}.fc2"), out);
    }
}

/// Returns `(h_bag, alpha)`: the `1 × d` bag embedding `alphaᵀ H` and the
/// `N × 1` instance weights.
pub fn attention_pool<T: Real>(tape: &mut Tape<T>, h: Var, p: &PoolingParams<Var>) -> Result<(Var, Var)> {
    let proj = tape.matmul(h, p.v)?;
    let act = tape.tanh(proj);
    let scores = tape.matmul(act, p.w)?;
    let row = tape.transpose(scores);
    let alpha_row = tape.softmax_rows(row);
    let h_bag = tape.matmul(alpha_row, h)?;
    let alpha = tape.transpose(alpha_row);
    Ok((h_bag, alpha))
}

pub fn classify<T: Real>(tape: &mut Tape<T>, h_bag: Var, p: &ClassifierParams<Var>) -> Result<Var> {
    let z = p.fc1.forward(tape, h_bag)?;
    let z = tape.relu(z);
    p.fc2.forward(tape, z)
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, label: usize) -> Result<Var> {
    tape.cross_entropy(logits, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(h: &Tensor<f64>, p: &PoolingParams<Tensor<f64>>) -> (Tensor<f64>, Tensor<f64>) {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let bp = p.map(&mut |t| tape.constant(t.clone()));
        let (b, a) = attention_pool(&mut tape, hv, &bp).unwrap();
        (tape.value(b).clone(), tape.value(a).clone())
    }

    fn logits(h: &Tensor<f64>, p: &ClassifierParams<Tensor<f64>>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let bp = p.map(&mut |t| tape.constant(t.clone()));
        let z = classify(&mut tape, hv, &bp).unwrap();
        tape.value(z).clone()
    }

    #[test]
    fn single_instance_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PoolingParams::init(6, 4, &mut rng);
        let h = Tensor::from_fn(1, 6, |_, j| j as f64);
        let (bag, alpha) = pool(&h, &p);
        assert_eq!(alpha.data(), &[1.0]);
        assert_eq!(bag, h);
    }

    #[test]
    fn identical_instances_pool_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PoolingParams::init(6, 4, &mut rng);
        let h = Tensor::from_fn(1, 6, |_, j| 0.5 - j as f64).gather_rows(&[0; 4]);
        let (bag, alpha) = pool(&h, &p);
        for &a in alpha.data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        assert!(bag.max_abs_diff(&h.gather_rows(&[0])) < 1e-15);
    }

    #[test]
    fn pooling_matches_literal_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PoolingParams::init(5, 3, &mut rng);
        let h: Tensor<f64> = Tensor::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let scores: Vec<f64> = (0..4)
            .map(|i| {
                (0..3)
                    .map(|a| {
                        let pre: f64 = (0..5).map(|c| h.get(i, c) * p.v.get(c, a)).sum();
                        pre.tanh() * p.w.get(a, 0)
                    })
                    .sum()
            })
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
        let alpha: Vec<f64> = scores.iter().map(|s| (s - mx).exp() / z).collect();
        let bag: Vec<f64> = (0..5).map(|c| (0..4).map(|i| alpha[i] * h.get(i, c)).sum()).collect();
        let (got_bag, got_alpha) = pool(&h, &p);
        for (g, e) in got_alpha.data().iter().zip(&alpha) {
            assert!((g - e).abs() < 1e-15);
        }
        for (g, e) in got_bag.data().iter().zip(&bag) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let p = ClassifierParams {
            fc1: Linear {
                weight: Tensor::zeros(4, 2),
                bias: Tensor::zeros(1, 2),
            },
            fc2: Linear {
                weight: Tensor::zeros(2, 3),
                bias: Tensor::zeros(1, 3),
            },
        };
        assert_eq!(logits(&Tensor::full(1, 4, 1.0), &p), Tensor::zeros(1, 3));
    }

    #[test]
    fn hand_computed_two_class_logits() {
        // h = [1, -2, 3]; fc1: w = [0.5, 0.25, 1]ᵀ, b = -1 → 0.5 - 0.5 + 3 - 1 = 2
        // fc2: w = [1.5, -1], b = [0.25, 0.5] → [3.25, -1.5]
        let p = ClassifierParams {
            fc1: Linear {
                weight: Tensor::from_vec(3, 1, vec![0.5, 0.25, 1.0]).unwrap(),
                bias: Tensor::scalar(-1.0),
            },
            fc2: Linear {
                weight: Tensor::from_vec(1, 2, vec![1.5, -1.0]).unwrap(),
                bias: Tensor::from_vec(1, 2, vec![0.25, 0.5]).unwrap(),
            },
        };
        let h = Tensor::from_vec(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(logits(&h, &p).data(), &[3.25, -1.5]);
        // negative hidden pre-activation is clipped: b = -5 → hidden 0 → logits = b2
        let mut clipped = p.clone();
        clipped.fc1.bias = Tensor::scalar(-5.0);
        assert_eq!(logits(&h, &clipped).data(), &[0.25, 0.5]);
    }

    #[test]
    fn classifier_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ClassifierParams::<Tensor<f64>>::init(6, 3, &mut rng);
        let h: Tensor<f64> = Tensor::from_fn(1, 6, |_, _| rng.random_range(-1.0..1.0));
        let expect = h
            .matmul(&p.fc1.weight)
            .unwrap()
            .add_row(&p.fc1.bias)
            .unwrap()
            .relu()
            .matmul(&p.fc2.weight)
            .unwrap()
            .add_row(&p.fc2.bias)
            .unwrap();
        assert_eq!(logits(&h, &p), expect);
    }
}
