use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DEVICE;
use crate::container::Array;
use crate::error::{Error, Result};

/// Named trainable parameters with seeded initialization.
///
/// Parameters are created in a fixed order by model constructors, so the
/// same seed always yields the same weights.
///
/// Requesting an existing name returns the stored parameter instead of
/// creating a new one, so a model can be rebuilt over the same store. A
/// frozen store hands out detached tensors that never receive gradients.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    frozen: bool,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            frozen: false,
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn lookup(&self, name: &str, shape: &[usize]) -> candle_core::Result<Option<Tensor>> {
        let Some(var) = self.vars.get(name) else {
            if self.frozen {
                candle_core::bail!("frozen parameter store has no `{name}`");
            }
            return Ok(None);
        };
        if var.dims() != shape {
            candle_core::bail!("parameter `{name}` exists with shape {:?}, requested {shape:?}", var.dims());
        }
        Ok(Some(if self.frozen {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        }))
    }

    fn insert(&mut self, name: String, data: Vec<f32>, shape: &[usize]) -> candle_core::Result<Tensor> {
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &DEVICE)?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f32) -> candle_core::Result<Tensor> {
        let name = name.into();
        if let Some(t) = self.lookup(&name, shape)? {
            return Ok(t);
        }
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if bound > 0.0 {
                    self.rng.random_range(-bound..=bound)
                } else {
                    0.0
                }
            })
            .collect();
        self.insert(name, data, shape)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> candle_core::Result<Tensor> {
        let name = name.into();
        if let Some(t) = self.lookup(&name, shape)? {
            return Ok(t);
        }
        let n: usize = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Snapshot of every parameter, keyed `prefix + name`.
    pub fn export(&self, prefix: &str) -> Result<BTreeMap<String, Array>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let data = v.as_tensor().flatten_all()?.to_vec1::<f32>()?;
                Ok((format!("{prefix}{k}"), Array::new(v.dims().to_vec(), data)?))
            })
            .collect()
    }

    /// Overwrites every parameter from `arrays[prefix + name]`. Every
    /// parameter must be present with a matching shape.
    pub fn import(&self, prefix: &str, arrays: &BTreeMap<String, Array>) -> Result<()> {
        for (k, v) in &self.vars {
            let key = format!("{prefix}{k}");
            let a = arrays
                .get(&key)
                .ok_or_else(|| Error::shape(format!("missing parameter `{key}`")))?;
            if a.shape != v.dims() {
                return Err(Error::shape(format!(
                    "parameter `{key}` has shape {:?}, expected {:?}",
                    a.shape,
                    v.dims()
                )));
            }
            v.set(&Tensor::from_vec(a.data.clone(), a.shape.as_slice(), &DEVICE)?)?;
        }
        Ok(())
    }
}
