use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters other than the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers and step count for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone)]
struct Param {
    value: Arc<Tensor>,
    grad: Option<Vec<f64>>,
    adam: AdamState,
}

/// Named model parameters with their gradients and optimizer state.
///
/// Iteration order is registration order, which fixes checkpoint layout and
/// checksums.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Param>,
}

impl PartialEq for ParameterStore {
    /// Equal names, values and optimizer state; gradients are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((na, a), (nb, b))| na == nb && a.value == b.value && a.adam == b.adam)
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let n = value.len();
        self.params.insert(
            name,
            Param {
                value: Arc::new(value),
                grad: None,
                adam: AdamState {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    step: 0,
                },
            },
        );
        Ok(())
    }

    /// Registers a `fan_in×fan_out` matrix drawn from Xavier-uniform.
    pub fn register_xavier(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.register(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| p.value.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params
            .iter()
            .map(|(k, p)| (k.as_str(), p.value.as_ref()))
    }

    pub(crate) fn value_arc(&self, name: &str) -> Option<Arc<Tensor>> {
        self.params.get(name).map(|p| Arc::clone(&p.value))
    }

    fn param_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.param_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Copies `src` over `dst`, both already registered with equal shapes.
    pub fn copy_value(&mut self, src: &str, dst: &str) -> Result<()> {
        let v = self
            .get(src)
            .ok_or_else(|| Error::UnknownParameter(src.to_string()))?
            .clone();
        self.set_value(dst, v)
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).and_then(|p| p.grad.as_deref())
    }

    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let p = self.param_mut(name)?;
        if delta.len() != p.value.len() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                left: p.value.shape().to_vec(),
                right: vec![delta.len()],
            });
        }
        match &mut p.grad {
            Some(g) => {
                for (x, d) in g.iter_mut().zip(delta) {
                    *x += d;
                }
            }
            None => p.grad = Some(delta.to_vec()),
        }
        Ok(())
    }

    /// Sets the gradients of every parameter selected by `filter` to zero.
    pub fn zero_grads(&mut self, filter: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            if filter(name) {
                p.grad = Some(vec![0.0; p.value.len()]);
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn adam_state(&self, name: &str) -> Option<&AdamState> {
        self.params.get(name).map(|p| &p.adam)
    }

    pub fn set_adam_state(&mut self, name: &str, state: AdamState) -> Result<()> {
        let p = self.param_mut(name)?;
        if state.m.len() != p.value.len() || state.v.len() != p.value.len() {
            return Err(Error::ShapeMismatch {
                op: "set_adam_state",
                left: p.value.shape().to_vec(),
                right: vec![state.m.len(), state.v.len()],
            });
        }
        p.adam = state;
        Ok(())
    }

    /// One bias-corrected Adam update on every parameter accepted by
    /// `trainable`, then clears all gradients.
    ///
    /// Fails without modifying anything if a trainable parameter has no
    /// gradient.
    pub fn adam_step(
        &mut self,
        lr: f64,
        cfg: &AdamConfig,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        if let Some((name, _)) = self
            .params
            .iter()
            .find(|(name, p)| trainable(name) && p.grad.is_none())
        {
            return Err(Error::MissingGradient(name.clone()));
        }
        for (name, p) in self.params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let g = p.grad.take().expect("checked above");
            let st = &mut p.adam;
            st.step += 1;
            let bc1 = 1.0 - cfg.beta1.powf(st.step as f64);
            let bc2 = 1.0 - cfg.beta2.powf(st.step as f64);
            let w = Arc::make_mut(&mut p.value).data_mut();
            for i in 0..w.len() {
                st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
                st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        self.clear_grads();
        Ok(())
    }

    /// SHA-256 prefix over names, shapes and values of the selected parameters.
    pub fn checksum_where(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            if !filter(name) {
                continue;
            }
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn checksum(&self) -> String {
        self.checksum_where(|_| true)
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}
