use serde::{Deserialize, Serialize};

use super::ParamRegistry;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out like the registry.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, reg: &ParamRegistry) -> Self {
        let zeros: Vec<Vec<f64>> = reg.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently held in `reg`.
    pub fn step(&mut self, reg: &mut ParamRegistry) -> Result<()> {
        if let Some(t) = reg.tensors().iter().find(|t| t.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient(t.name.clone()));
        }
        if self.m.len() != reg.len() {
            return Err(Error::Shape("optimizer state does not match registry".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((t, m), v) in reg.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..t.values.len() {
                let g = t.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                t.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One Adam update at an explicit step count `t` (1-based) with external state.
pub fn adam_step(reg: &mut ParamRegistry, state: &mut Adam, t: u64) -> Result<()> {
    state.t = t.saturating_sub(1);
    state.step(reg)
}
