//! Bias-corrected Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Named parameter tensors of one network.
pub type ParamMap = BTreeMap<String, Tensor<f32>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64) -> Self {
        Self {
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            lr,
            beta1,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of every parameter that has an entry in `grads`.
/// Parameters without a gradient are left untouched; the step counter
/// advances exactly once per call either way.
pub fn adam_step(params: &mut ParamMap, grads: &ParamMap, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| TensorError::MissingParameter(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                axis: format!("gradient of `{name}`"),
                expected: p.len(),
                actual: g.len(),
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1 as f32, state.beta2 as f32);
    let (one_b1, one_b2) = ((1.0 - state.beta1) as f32, (1.0 - state.beta2) as f32);
    let step = (state.lr / c1) as f32;
    let inv_c2 = (1.0 / c2) as f32;
    let eps = state.epsilon as f32;
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
        }
    }
    Ok(())
}
