use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter block in the
/// network's block order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &Network) -> Self {
        let shapes: Vec<usize> = net.blocks().iter().map(|(_, p)| p.value.len()).collect();
        Self {
            config,
            step_count: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, net: &mut Network) -> Result<(), NnError> {
        let blocks = net.blocks_mut();
        if blocks.len() != self.m.len() || blocks.iter().zip(&self.m).any(|((_, p), m)| p.value.len() != m.len()) {
            return Err(NnError::DimensionMismatch { expected: self.m.len(), got: blocks.len() });
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((_, p), (m, v)) in blocks.into_iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                p.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}
