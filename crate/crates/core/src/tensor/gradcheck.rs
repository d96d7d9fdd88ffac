//! Central finite-difference gradient checks in 64-bit.

use super::{Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative-error denominator floor; keeps near-zero gradients from
/// dominating the metric with rounding noise.
pub const REL_FLOOR: f64 = 1e-3;

/// Compares the tape's gradient of the scalar `f(inputs)` against central
/// differences with step `eps` for every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.constant(v.clone())).collect();
        Ok(f(&vars)?.value().item())
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let loss = f(&vars)?;
    tape.backward(&loss)?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = var.grad().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}

/// `sum(out * weights)` with a fixed random weighting; turns any op output
/// into a scalar whose gradient exercises every output element.
pub fn weighted_sum(out: &Var<f64>, weights: &Tensor<f64>) -> Result<Var<f64>> {
    let w = out.tape().constant(weights.clone().reshape(&out.shape())?);
    Ok(out.mul(&w)?.sum())
}
