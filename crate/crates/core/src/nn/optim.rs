use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{ParamStore, DEVICE};
use crate::container::Array;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

/// AdamW with decoupled weight decay and exportable moment state.
pub struct AdamW {
    config: AdamWConfig,
    slots: Vec<Slot>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, config: AdamWConfig) -> Result<Self> {
        let slots = params
            .vars()
            .map(|(name, var)| {
                Ok(Slot {
                    name: name.to_string(),
                    var: var.clone(),
                    m: var.zeros_like()?,
                    v: var.zeros_like()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            slots,
            step: 0,
        })
    }

    pub fn config(&self) -> AdamWConfig {
        self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left alone
    /// apart from the moment decay, matching the usual dense semantics.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            let m = ((&slot.m * beta1)? + (g * (1.0 - beta1))?)?;
            let v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let theta = (slot.var.as_tensor() * (1.0 - lr * weight_decay))?;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + eps)?)?;
            slot.var.set(&(theta - (update * lr)?)?)?;
            slot.m = m;
            slot.v = v;
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str) -> Result<BTreeMap<String, Array>> {
        let mut out = BTreeMap::new();
        for slot in &self.slots {
            for (tag, t) in [("m", &slot.m), ("v", &slot.v)] {
                let data = t.flatten_all()?.to_vec1::<f32>()?;
                out.insert(
                    format!("{prefix}{tag}.{}", slot.name),
                    Array::new(t.dims().to_vec(), data)?,
                );
            }
        }
        Ok(out)
    }

    pub fn import(&mut self, prefix: &str, arrays: &BTreeMap<String, Array>, step: u64) -> Result<()> {
        for slot in &mut self.slots {
            for tag in ["m", "v"] {
                let key = format!("{prefix}{tag}.{}", slot.name);
                let a = arrays
                    .get(&key)
                    .ok_or_else(|| Error::shape(format!("missing optimizer state `{key}`")))?;
                if a.shape != slot.var.dims() {
                    return Err(Error::shape(format!("optimizer state `{key}` has wrong shape")));
                }
                let t = Tensor::from_vec(a.data.clone(), a.shape.as_slice(), &DEVICE)?;
                if tag == "m" {
                    slot.m = t;
                } else {
                    slot.v = t;
                }
            }
        }
        self.step = step;
        Ok(())
    }
}
