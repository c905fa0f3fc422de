//! Adam over a parameter set.

use serde::{Deserialize, Serialize};

use crate::params::{Gradients, ParamSet};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = params.zeros_like().grads;
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update. A gradient that is exactly zero everywhere leaves
    /// parameters, moments and the step counter untouched.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) {
        assert_eq!(grads.grads.len(), params.tensors.len(), "gradient/parameter count mismatch");
        if grads.grads.iter().flatten().all(|g| *g == T::zero()) {
            return;
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.learning_rate / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        for (k, t) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads.grads[k]);
            for j in 0..t.data.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                t.data[j] = t.data[j] - step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
    }
}
