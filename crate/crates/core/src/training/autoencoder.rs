use crate::nets::checkpoint::{CheckpointMeta, ModelCheckpoint};
use crate::nets::{Arch, Discriminator, Generator, NetConfig};
use crate::rng::Rng;
use crate::tensor::{adam_step, AdamState, BatchNormMode, Tape, Tensor};

use super::gmm::GmmModel;
use super::{check_finite, Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            lr: 0.0002,
            beta1: 0.5,
            seed: 0,
        }
    }
}

/// Discriminator-shaped encoder emitting a latent code, and a two-stream
/// generator as decoder.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Discriminator,
    pub decoder: Generator,
}

impl Autoencoder {
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            encoder: Discriminator::with_head(config, "ae", "ae.out", config.latent_dim, &mut rng.derive(1))?,
            decoder: Generator::new(config, Arch::TwoStream, &mut rng.derive(2))?,
        })
    }

    /// Codes `(N, latent_dim)` for clips `(N, 3, T, S, S)`.
    pub fn encode(&mut self, clips: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        Ok(self.encoder.logits(clips, mode)?)
    }

    pub fn decode(&mut self, codes: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        Ok(self.decoder.sample(codes, mode)?)
    }

    pub fn reconstruct(&mut self, clips: &Tensor) -> Result<Tensor> {
        let codes = self.encode(clips, BatchNormMode::Eval)?;
        self.decode(&codes, BatchNormMode::Eval)
    }

    pub fn checkpoint(&self, seed: u64, iteration: u64, gmm: Option<&GmmModel>) -> ModelCheckpoint {
        ModelCheckpoint {
            meta: CheckpointMeta {
                kind: "baseline".into(),
                config: self.decoder.config,
                arch: Some(Arch::TwoStream),
                seed,
                iteration,
                extra: serde_json::json!({ "gmm": gmm }),
            },
            nets: [
                ("encoder".to_string(), self.encoder.net.clone()),
                ("decoder".to_string(), self.decoder.net.clone()),
            ]
            .into(),
            optimizers: Default::default(),
        }
    }

    /// The autoencoder and, if present, the fitted mixture.
    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<(Self, Option<GmmModel>)> {
        let mut ae = Self::new(ck.meta.config, &mut Rng::new(0))?;
        ae.encoder.net = ck.net("encoder")?.clone();
        ae.decoder.net = ck.net("decoder")?.clone();
        let gmm = match ck.meta.extra.get("gmm") {
            Some(v) if !v.is_null() => Some(
                serde_json::from_value(v.clone())
                    .map_err(|e| TrainError::Config(format!("checkpoint mixture: {e}")))?,
            ),
            _ => None,
        };
        Ok((ae, gmm))
    }
}

/// Minimizes mean squared reconstruction error with Adam. `on_step` receives
/// the iteration (1-based) and the loss before that iteration's update.
pub fn train_autoencoder(
    clips: &[Tensor],
    net: NetConfig,
    config: &AeConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<Autoencoder> {
    if clips.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if config.batch_size < 2 {
        return Err(TrainError::Config("batch_size must be >= 2".into()));
    }
    let root = Rng::new(config.seed);
    let mut ae = Autoencoder::new(net, &mut root.derive(1))?;
    let mut rng = root.derive(2);
    let mut e_opt = AdamState::new(config.lr, config.beta1);
    let mut d_opt = AdamState::new(config.lr, config.beta1);
    for it in 1..=config.steps {
        let batch = crate::datasets::sample_batch(clips, config.batch_size, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(batch);
        let eb = ae.encoder.net.bind(&tape, true);
        let db = ae.decoder.net.bind(&tape, true);
        let code = ae.encoder.run(&eb, &x, BatchNormMode::Train, None, |f| Ok(f.clone()))?.logits;
        let out = ae.decoder.run(&db, &code, BatchNormMode::Train, None)?;
        let loss = out.video.sub(&x)?.square().mean();
        let value = loss.value().item() as f64;
        check_finite(value, "autoencoder", it)?;
        tape.backward(&loss)?;
        adam_step(&mut ae.encoder.net.params, &eb.grads(), &mut e_opt)?;
        adam_step(&mut ae.decoder.net.params, &db.grads(), &mut d_opt)?;
        on_step(it, value);
    }
    Ok(ae)
}

/// Decodes one mixture sample into a clip `(3, T, S, S)`.
pub fn sample_baseline(gmm: &GmmModel, decoder: &mut Generator, seed: u64) -> Result<Tensor> {
    let mut rng = Rng::new(seed);
    let z: Vec<f32> = gmm.sample(&mut rng).into_iter().map(|v| v as f32).collect();
    let d = z.len();
    let clip = decoder.sample(&Tensor::new(vec![1, d], z)?, BatchNormMode::Eval)?;
    Ok(clip.outer(0))
}
