use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::TrainingError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Global L2 norm over every entry of every tensor.
pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads.into_iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_by_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> Result<f64, TrainingError> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(TrainingError::Config(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads.values());
    if !norm.is_finite() {
        let name = grads.iter().find(|(_, g)| !g.all_finite()).map(|(n, _)| n.clone()).unwrap_or_default();
        return Err(TrainingError::NonFinite(format!("gradient of `{name}` is not finite")));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_in_place(scale);
        }
    }
    Ok(norm)
}

/// First and second moments per parameter plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update. Parameters are only modified when every
/// updated value is finite; otherwise the state is left untouched.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainingError> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| TrainingError::Config(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(TrainingError::Config(format!("gradient shape {:?} does not match `{name}` {:?}", g.shape(), p.shape())));
        }
    }
    let t = state.t + 1;
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let mut staged = Vec::with_capacity(grads.len());
    for (name, g) in grads {
        let p = &params[name];
        let zeros = || Tensor::zeros(g.shape());
        let mut m = state.m.get(name).cloned().unwrap_or_else(zeros);
        let mut v = state.v.get(name).cloned().unwrap_or_else(zeros);
        let mut next = p.clone();
        for (((pi, mi), vi), &gi) in next.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        if !next.all_finite() {
            return Err(TrainingError::NonFinite(format!("Adam update of `{name}` is not finite")));
        }
        staged.push((name.clone(), next, m, v));
    }
    for (name, p, m, v) in staged {
        params.insert(name.clone(), p);
        state.m.insert(name.clone(), m);
        state.v.insert(name, v);
    }
    state.t = t;
    Ok(())
}
