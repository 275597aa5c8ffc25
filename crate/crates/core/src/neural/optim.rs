use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamMut, Real};

/// Penalty weights on the loss `λ1·Σ|w| + λ2·Σw²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Regularization {
    pub l1: f64,
    pub l2: f64,
}

impl Regularization {
    pub const NONE: Regularization = Regularization { l1: 0.0, l2: 0.0 };
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization { l1: 0.005, l2: 0.001 }
    }
}

/// Adds the penalty gradients `λ1·sign(w) + 2λ2·w` to `grad`.
pub fn add_l1_l2<T: Real>(w: &[T], grad: &mut [T], reg: Regularization) {
    if reg == Regularization::NONE {
        return;
    }
    let (l1, l2) = (T::of(reg.l1), T::of(2.0 * reg.l2));
    for (g, &v) in grad.iter_mut().zip(w) {
        let sign = if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        *g += l1 * sign + l2 * v;
    }
}

/// Adam with bias-corrected moments. Moment buffers are created on the first
/// step and matched to parameters by position.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, params: &mut [ParamMut<'_, T>], lr: f64, reg: Regularization) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer built for another model");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (nb1, nb2) = (T::one() - b1, T::one() - b2);
        let step_size = T::of(lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let regularize = p.regularize;
            let (w, g) = p.tensor.split_mut();
            assert_eq!(w.len(), m.len(), "parameter {} changed size", p.name);
            if regularize {
                add_l1_l2(w, g, reg);
            }
            for i in 0..w.len() {
                m[i] = b1 * m[i] + nb1 * g[i];
                v[i] = b2 * v[i] + nb2 * g[i] * g[i];
                w[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
    }
}

/// Step decay: the rate is multiplied by `gamma` at each milestone epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            milestones: vec![30, 60, 80, 160],
            gamma: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.base_lr)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "milestones {:?} are not strictly increasing",
                self.milestones
            )));
        }
        Ok(())
    }

    /// Rate for zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.gamma.powi(passed as i32)
    }
}
