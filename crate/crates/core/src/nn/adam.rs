use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterSet;

/// Adam with bias correction. Frozen entries of the parameter set are left
/// untouched, moments included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &[f64]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::dim(format!(
                "adam: {} gradients, {} moments, {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let trainable = params.trainable().to_vec();
        let values = params.values_mut();
        for i in 0..values.len() {
            if !trainable[i] {
                continue;
            }
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
