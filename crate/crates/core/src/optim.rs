//! Adam with inspectable, serialisable moment estimates.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

struct Slot {
    var: Var,
    m: Tensor,
    v: Tensor,
}

pub struct Adam {
    config: AdamConfig,
    step: u64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new<'a>(vars: impl IntoIterator<Item = (String, &'a Var)>, config: AdamConfig) -> Result<Self> {
        let mut slots = BTreeMap::new();
        for (name, var) in vars {
            let zeros = var.as_tensor().zeros_like()?;
            let slot = Slot {
                var: var.clone(),
                m: zeros.clone(),
                v: zeros,
            };
            if slots.insert(name.clone(), slot).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
            }
        }
        Ok(Self { config, step: 0, slots })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; parameters without a gradient are left untouched.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for slot in self.slots.values_mut() {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            // gradients carry their graph; moments must not keep it alive
            let g = &g.detach();
            slot.m = ((&slot.m * beta1)? + (g * (1.0 - beta1))?)?;
            slot.v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&slot.m / bias1)?;
            let v_hat = (&slot.v / bias2)?;
            let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
            slot.var.set(&(slot.var.as_tensor().detach() - (update * lr)?)?)?;
        }
        Ok(())
    }

    /// Moment tensors named `{prefix}{param}.m` / `.v`.
    pub fn named_state(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.slots
            .iter()
            .flat_map(|(name, s)| {
                [
                    (format!("{prefix}{name}.m"), s.m.clone()),
                    (format!("{prefix}{name}.v"), s.v.clone()),
                ]
            })
            .collect()
    }

    pub fn load_state(&mut self, prefix: &str, step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, slot) in self.slots.iter_mut() {
            for (suffix, target) in [("m", &mut slot.m), ("v", &mut slot.v)] {
                let key = format!("{prefix}{name}.{suffix}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Schema(format!("optimizer state lacks `{key}`")))?;
                if t.dims() != target.dims() {
                    return Err(Error::ShapeMismatch(format!(
                        "optimizer state `{key}` has shape {:?}, expected {:?}",
                        t.dims(),
                        target.dims()
                    )));
                }
                *target = t.clone();
            }
        }
        self.step = step;
        Ok(())
    }
}

/// Sum of squares of every gradient present for `vars`.
pub fn grad_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += nn::to_scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    Ok(total.sqrt())
}
