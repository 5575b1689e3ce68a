//! Named parameter store with per-tensor Adam state.
//!
//! Parameters are keyed by string names (the same names used for tape
//! leaves), held in a BTreeMap so every iteration order is deterministic.
//! Each tensor carries its own first/second-moment buffers and step counter;
//! a tensor's counter only advances when a gradient is supplied for it, which
//! keeps bias correction exact for parameters that participate in only some
//! steps.

use super::tensor::Tensor;
use super::NumericsError;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct ParamEntry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// All trainable tensors of a model, with optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Register a tensor under `name`, with fresh optimizer state.
    /// Re-inserting an existing name replaces value and state.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let (r, c) = value.shape();
        self.entries.insert(
            name.to_string(),
            ParamEntry { value, m: Tensor::zeros(r, c), v: Tensor::zeros(r, c), step: 0 },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NumericsError> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), &v.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One Adam update over the supplied gradients. Tensors without an entry
    /// in `grads` (and tensors whose gradient is entirely zero) keep their
    /// state untouched: an all-zero gradient advances nothing and changes
    /// nothing, so skipped parameters behave exactly as if absent from the
    /// step.
    pub fn adam_step(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        cfg: &AdamConfig,
    ) -> Result<(), NumericsError> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(NumericsError::NonFinite { node: 0, context: "adam gradient" });
            }
            if g.data().iter().all(|&x| x == 0.0) {
                continue;
            }
            let entry = self
                .entries
                .get_mut(name)
                .ok_or_else(|| NumericsError::UnknownParam(name.clone()))?;
            if entry.value.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch(format!(
                    "gradient for {name:?} is {:?}, parameter is {:?}",
                    g.shape(),
                    entry.value.shape()
                )));
            }
            entry.step += 1;
            let t = entry.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for idx in 0..entry.value.len() {
                let gi = g.data()[idx];
                let m = &mut entry.m.data_mut()[idx];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                let m_hat = *m / bc1;
                let v = &mut entry.v.data_mut()[idx];
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                let v_hat = *v / bc2;
                entry.value.data_mut()[idx] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            if !entry.value.all_finite() {
                return Err(NumericsError::NonFinite { node: 0, context: "adam update" });
            }
        }
        Ok(())
    }

    /// Raw (value, m, v, step) view for checkpointing.
    pub(crate) fn entry_state(&self, name: &str) -> Option<(&Tensor, &Tensor, &Tensor, u64)> {
        self.entries.get(name).map(|e| (&e.value, &e.m, &e.v, e.step))
    }

    /// Restore (value, m, v, step) for checkpointing.
    pub(crate) fn set_entry_state(&mut self, name: &str, value: Tensor, m: Tensor, v: Tensor, step: u64) {
        self.entries.insert(name.to_string(), ParamEntry { value, m, v, step });
    }
}
