//! Diagonal-covariance Gaussian mixture fitted by EM with k-means++ seeding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("need at least {k} samples to fit {k} components, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Mean log-likelihood per sample after each EM iteration.
    pub log_likelihood: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn log_gauss(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = -0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        for ((xi, mu), var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            acc -= 0.5 * (var.ln() + (xi - mu).powi(2) / var);
        }
        acc
    }

    /// Per-component `ln(w_k N(x | k))`.
    fn joint(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.weights[k].ln() + self.log_gauss(k, x);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.components()];
        self.joint(x, &mut buf);
        log_sum_exp(&buf)
    }

    pub fn mean_log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        data.iter().map(|x| self.log_density(x)).sum::<f64>() / data.len() as f64
    }

    pub fn sample_component(&self, rng: &mut Rng) -> usize {
        rng.categorical(&self.weights)
    }

    /// One draw: a component by weight, then a diagonal Gaussian sample.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let k = self.sample_component(rng);
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| m + v.sqrt() * rng.normal())
            .collect()
    }
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centers = vec![data[rng.below(data.len())].clone()];
    let mut dist: Vec<f64> = data.iter().map(|x| sq(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            rng.categorical(&dist)
        } else {
            rng.below(data.len())
        };
        let c = data[idx].clone();
        for (d, x) in dist.iter_mut().zip(data) {
            *d = d.min(sq(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Fits `k` components to `data` (rows of equal length).
///
/// Stops when the mean log-likelihood improves by less than `1e-6`
/// relative, or after 200 iterations.
pub fn fit_gmm(data: &[Vec<f64>], k: usize, seed: u64) -> Result<GmmModel, GmmError> {
    let n = data.len();
    if k == 0 || n < k {
        return Err(GmmError::TooFewSamples { n, k });
    }
    let dim = data[0].len();
    if dim == 0 || data.iter().any(|x| x.len() != dim || x.iter().any(|v| !v.is_finite())) {
        return Err(GmmError::InvalidData("rows must be non-empty, equal-length and finite".into()));
    }
    let mut rng = Rng::new(seed);
    let mut global_var = vec![0.0; dim];
    let global_mean: Vec<f64> = (0..dim).map(|j| data.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    for x in data {
        for j in 0..dim {
            global_var[j] += (x[j] - global_mean[j]).powi(2) / n as f64;
        }
    }
    global_var.iter_mut().for_each(|v| *v = v.max(VARIANCE_FLOOR));
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(data, k, &mut rng),
        variances: vec![global_var; k],
        log_likelihood: Vec::new(),
    };
    let mut resp = vec![vec![0.0; k]; n];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERATIONS {
        // E step
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            model.joint(x, r);
            let z = log_sum_exp(r);
            r.iter_mut().for_each(|v| *v = (*v - z).exp());
        }
        // M step
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= 0.0 {
                // Empty component: reseed at a random point.
                model.means[c] = data[rng.below(n)].clone();
                model.weights[c] = f64::MIN_POSITIVE;
                continue;
            }
            let mut mean = vec![0.0; dim];
            for (x, r) in data.iter().zip(&resp) {
                for j in 0..dim {
                    mean[j] += r[c] * x[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; dim];
            for (x, r) in data.iter().zip(&resp) {
                for j in 0..dim {
                    var[j] += r[c] * (x[j] - mean[j]).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / nk).max(VARIANCE_FLOOR));
            model.means[c] = mean;
            model.variances[c] = var;
            model.weights[c] = nk / n as f64;
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
        let ll = model.mean_log_likelihood(data);
        model.log_likelihood.push(ll);
        if prev.is_finite() && (ll - prev).abs() <= TOLERANCE * prev.abs().max(1e-12) {
            break;
        }
        prev = ll;
    }
    Ok(model)
}
