//! Rectified Adam with decoupled weight decay, and the step-decay
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{IgtError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-5;
pub const DEFAULT_INITIAL_LR: f64 = 1e-3;
pub const DEFAULT_DECAYED_LR: f64 = 1e-4;
pub const DEFAULT_DECAY_EPOCH: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        RAdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }
}

impl RAdamConfig {
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    /// Length of the approximated simple moving average at step `t` (1-based).
    pub fn rho(&self, t: u64) -> f64 {
        let b2t = self.beta2.powi(t as i32);
        self.rho_inf() - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification factor, or `None` when the step falls back to
    /// plain momentum.
    pub fn rectification(&self, t: u64) -> Option<f64> {
        let rho = self.rho(t);
        if rho <= 4.0 {
            return None;
        }
        let inf = self.rho_inf();
        Some((((rho - 4.0) * (rho - 2.0) * inf) / ((inf - 4.0) * (inf - 2.0) * rho)).sqrt())
    }
}

/// Per-parameter moment buffers plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct RAdamState<T> {
    pub config: RAdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> RAdamState<T> {
    pub fn new<'a>(config: RAdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        RAdamState { config, t: 0, m, v }
    }

    /// One update over all parameters. `params` and `grads` are aligned
    /// with the buffers; names are only used for error messages.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<T>)], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(IgtError::Contract(format!(
                "optimizer holds {} buffers, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(IgtError::dim("radam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(IgtError::Training(format!("non-finite gradient for parameter {name}")));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bias2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let rect = c.rectification(self.t).map(T::of);
        let lr_t = T::of(lr);
        let decay = T::one() - T::of(lr * c.weight_decay);
        let eps = T::of(c.eps);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (x, &gj)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                *x *= decay;
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / bias1;
                match rect {
                    Some(r) => {
                        let v_hat = (v[j] / bias2).sqrt();
                        *x -= lr_t * r * m_hat / (v_hat + eps);
                    }
                    None => *x -= lr_t * m_hat,
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decayed: f64,
    pub decay_epoch: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: DEFAULT_INITIAL_LR,
            decayed: DEFAULT_DECAYED_LR,
            decay_epoch: DEFAULT_DECAY_EPOCH,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.initial
        } else {
            self.decayed
        }
    }
}
