use serde::{Deserialize, Serialize};

use super::tape::{mismatch, AutodiffError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created on the first step.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() {
            return Err(mismatch("adam_step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(mismatch("adam_step", p.shape(), &[g.len()]));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(mismatch("adam_step", &[self.m.len()], &[params.len()]));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
