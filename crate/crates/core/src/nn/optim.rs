use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use super::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators, shaped like the network's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
    step: u64,
}

impl OptimizerState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor2> = net.trainable().iter().map(|t| Tensor2::zeros(t.dim())).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every trainable tensor.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let params = net.trainable_mut();
        if params.len() != grads.0.len() || params.len() != self.first.len() {
            return Err(Error::Shape("gradient list does not match parameters".into()));
        }
        for (p, g) in params.iter().zip(&grads.0) {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!("gradient {:?} vs parameter {:?}", g.dim(), p.dim())));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.into_iter().zip(&grads.0).zip(&mut self.first).zip(&mut self.second) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            });
        }
        Ok(())
    }
}
