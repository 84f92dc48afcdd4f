//! Stochastic gradient descent with classical momentum and step decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub learning_rate: f64,
    /// Not given for the original method; 0.9 is our default.
    pub momentum: f64,
    pub decay_period: usize,
    pub decay_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { learning_rate: 0.01, momentum: 0.9, decay_period: 50, decay_factor: 0.1 }
    }
}

impl LrSchedule {
    /// `learning_rate * decay_factor^(epoch / decay_period)`.
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        let steps = if self.decay_period == 0 { 0 } else { epoch / self.decay_period };
        self.learning_rate * self.decay_factor.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay_factor must be in (0, 1], got {}", self.decay_factor)));
        }
        Ok(())
    }
}

/// Velocity buffers plus the epoch counter driving the schedule.
///
/// Update rule: `v <- momentum * v + g; theta <- theta - lr_eff * v`.
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub schedule: LrSchedule,
    pub epoch: usize,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(schedule: LrSchedule, params: &ParamStore<T>) -> Self {
        Self { schedule, epoch: 0, velocity: params.zeros_like() }
    }

    pub fn effective_lr(&self) -> f64 {
        self.schedule.effective_lr(self.epoch)
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("sgd_step", format!("{} grads for {} params", grads.len(), params.len())));
        }
        for (g, p) in grads.iter().zip(params.values()) {
            if g.shape() != p.shape() {
                return Err(Error::shape("sgd_step", format!("{:?} vs {:?}", g.shape(), p.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { op: "sgd_step gradient".into() });
            }
        }
        let lr = T::of(self.effective_lr());
        let mu = T::of(self.schedule.momentum);
        for ((v, g), p) in self.velocity.iter_mut().zip(grads).zip(params.values_mut()) {
            for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vi = mu * *vi + gi;
                *pi = *pi - lr * *vi;
            }
        }
        Ok(())
    }
}
