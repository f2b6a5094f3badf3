//! Adam optimizer with bias correction.

use super::{GradAccum, ParamStore, Real};

/// First and second moment estimates for every parameter of a store, plus
/// the shared step counter. Serialized inside checkpoints.
#[derive(Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<Real>>,
    pub v: Vec<Vec<Real>>,
}

/// Hyperparameters; the defaults are the conventional ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            step: 0,
            m: (0..store.len())
                .map(|i| vec![0.0; store.value(i).len()])
                .collect(),
            v: (0..store.len())
                .map(|i| vec![0.0; store.value(i).len()])
                .collect(),
        }
    }

    /// One update over every parameter. Parameters without a gradient are
    /// treated as having a zero gradient, so their moments still decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradAccum, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as Real;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for idx in 0..store.len() {
            let grad = grads.get(idx);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let value = store.value_mut(idx);
            for j in 0..value.len() {
                let g = grad.map_or(0.0, |g| g[j]);
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                value[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }
}
