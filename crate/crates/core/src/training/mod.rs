//! Adversarial training (unconditional and first-frame conditioned), the
//! autoencoder baseline and its latent Gaussian mixture.

mod autoencoder;
mod future;
mod gan;
pub mod gmm;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::checkpoint::CheckpointError;
use crate::nets::NetError;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

pub use autoencoder::{sample_baseline, train_autoencoder, AeConfig, Autoencoder};
pub use future::{first_frames, reconstruction_term, FutureTrainer};
pub use gan::{gan_train_step, GanTrainer, LossBreakdown};
pub use gmm::{fit_gmm, GmmError, GmmModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {network} loss at iteration {iteration}")]
    NonFinite {
        network: &'static str,
        iteration: u64,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("batch shape {actual:?} does not match the model (expected (N, {expected:?}))")]
    BatchShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Distance used by the first-frame reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecNorm {
    /// Mean squared error.
    L2,
    /// Mean absolute error.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub lambda_mask: f64,
    pub lambda_rec: f64,
    pub rec_norm: RecNorm,
    pub max_iterations: u64,
    pub seed: u64,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 0.0002,
            beta1: 0.5,
            lambda_mask: 0.1,
            lambda_rec: 1.0,
            rec_norm: RecNorm::L2,
            max_iterations: 2000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!("batch_size {} must be >= 2", self.batch_size)));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(TrainError::Config("beta1 must be in [0, 1)".into()));
        }
        if !(self.lambda_mask >= 0.0) || !(self.lambda_rec >= 0.0) {
            return Err(TrainError::Config("lambda_mask and lambda_rec must be >= 0".into()));
        }
        Ok(())
    }
}

/// Losses of one training iteration. `g_loss` is the optimized total;
/// `adversarial`, `sparsity` and `rec` are its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub adversarial: f64,
    pub sparsity: f64,
    pub rec: f64,
    pub mask_mean: Option<f64>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub sparsity: f64,
    pub rec: f64,
    pub wall_ms: u64,
}

/// Anything with a per-batch training step over clip tensors.
pub trait Trainer {
    fn config(&self) -> &TrainConfig;
    fn rng(&mut self) -> &mut Rng;
    fn train_step(&mut self, real: &Tensor) -> Result<StepReport>;
    fn save(&self, path: &std::path::Path) -> Result<()>;
}

/// Where and how often a training loop checkpoints.
#[derive(Debug, Clone)]
pub struct CheckpointPlan {
    pub dir: PathBuf,
    pub every: u64,
}

/// Runs `iterations` steps on batches drawn from `data`, writing one metrics
/// line per iteration to `log` and calling `on_step` after each.
pub fn run_training<T: Trainer>(
    trainer: &mut T,
    data: &[Tensor],
    iterations: u64,
    mut log: Option<&mut dyn Write>,
    checkpoints: Option<&CheckpointPlan>,
    mut on_step: impl FnMut(&StepReport),
) -> Result<Vec<StepReport>> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batch = trainer.config().batch_size;
    let mut reports = Vec::with_capacity(iterations as usize);
    for _ in 0..iterations {
        let start = Instant::now();
        let real = crate::datasets::sample_batch(data, batch, trainer.rng());
        let r = trainer.train_step(&real)?;
        if let Some(w) = log.as_deref_mut() {
            let rec = MetricsRecord {
                iter: r.iteration,
                d_loss: r.d_loss,
                g_loss: r.g_loss,
                sparsity: r.sparsity,
                rec: r.rec,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        if let Some(cp) = checkpoints {
            if cp.every > 0 && r.iteration % cp.every == 0 {
                std::fs::create_dir_all(&cp.dir)?;
                trainer.save(&cp.dir.join(format!("iter_{:06}.tvgan", r.iteration)))?;
            }
        }
        on_step(&r);
        reports.push(r);
    }
    Ok(reports)
}

pub(crate) fn check_finite(v: f64, network: &'static str, iteration: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite { network, iteration })
    }
}

/// Mean of `|m|` over every mask element, in f64.
pub fn mask_l1_mean(mask: &Tensor) -> f64 {
    mask.data().iter().map(|v| v.abs() as f64).sum::<f64>() / mask.len() as f64
}

/// `lambda * mean(|m|)`.
pub fn sparsity_term(mask: &Tensor, lambda: f64) -> f64 {
    lambda * mask_l1_mean(mask)
}
