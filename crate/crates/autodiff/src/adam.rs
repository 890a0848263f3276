//! Adam optimizer with optional post-step weight clipping.

use serde::{Deserialize, Serialize};

use crate::error::{AdError, Result};
use crate::network::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            v: store.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction, followed by clipping to
/// `[-clip_bound, clip_bound]` when the store carries a bound.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.params.len() || state.m.len() != store.params.len() {
        return Err(AdError::Shape(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            store.params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((param, grad), (m, v)) in store
        .params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if grad.len() != param.tensor.len() {
            return Err(AdError::Shape(format!(
                "adam_step: gradient for '{}' has {} entries, parameter {}",
                param.name,
                grad.len(),
                param.tensor.len()
            )));
        }
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param.tensor.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    if let Some(bound) = store.clip_bound {
        store.clip(bound);
    }
    Ok(())
}
