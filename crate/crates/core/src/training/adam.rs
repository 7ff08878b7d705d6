use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

/// First and second moment accumulators, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor], hyper: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            hyper,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam descent step. Parameters are left untouched
/// when any gradient is non-finite.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract("parameter, gradient and moment counts differ".into()));
    }
    for (j, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(j).map_or("?", String::as_str);
        if p.shape() != g.shape() || p.shape() != state.m[j].shape() {
            return Err(Error::Contract(format!("shape mismatch for parameter `{name}`")));
        }
        if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` at element {k} is {}",
                g.data()[k]
            )));
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.hyper;
    state.step += 1;
    let c1 = 1.0 - beta1.powf(state.step as f64);
    let c2 = 1.0 - beta2.powf(state.step as f64);
    for (j, p) in params.iter_mut().enumerate() {
        let g = grads[j].data();
        let m = state.m[j].data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = state.v[j].data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let (m, v) = (state.m[j].data(), state.v[j].data());
        for ((x, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            *x -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}
