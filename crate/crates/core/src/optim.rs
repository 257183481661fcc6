//! Adaptive-moment (Adam) optimiser over [`Params`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient entry are left alone.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::config(format!("gradient for unknown parameter `{name}`")))?;
            if p.len() != g.len() {
                return Err(Error::Shape(format!("gradient shape mismatch for `{name}`")));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Adds `src` into `dst` entry-wise, inserting missing names.
pub fn accumulate_grads(dst: &mut BTreeMap<String, Tensor>, src: BTreeMap<String, Tensor>) {
    for (name, g) in src {
        match dst.get_mut(&name) {
            Some(d) => d.add_assign(&g),
            None => {
                dst.insert(name, g);
            }
        }
    }
}
