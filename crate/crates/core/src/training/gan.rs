use std::path::Path;

use crate::nets::checkpoint::{CheckpointMeta, ModelCheckpoint};
use crate::nets::{sample_latent, Arch, Discriminator, GenOutput, Generator, NetConfig};
use crate::rng::Rng;
use crate::tensor::{adam_step, AdamState, BatchNormMode, Tape, Tensor, Var};

use super::{check_finite, sparsity_term, Result, StepReport, TrainConfig, TrainError, Trainer};

/// Generator, discriminator and their optimizers for unconditional training.
#[derive(Debug, Clone)]
pub struct GanTrainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
    pub rng: Rng,
    pub iteration: u64,
}

/// Losses of a batch evaluated without touching any parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub d_loss: f64,
    pub adversarial: f64,
    pub sparsity: f64,
}

pub(crate) fn targets(n: usize, value: f32) -> Tensor {
    Tensor::full(&[n], value)
}

pub(crate) fn check_batch(config: &NetConfig, real: &Tensor) -> Result<()> {
    let s = real.shape();
    if s.len() != 5 || s[1..] != config.clip_shape() {
        return Err(TrainError::BatchShape {
            expected: config.clip_shape().to_vec(),
            actual: s.to_vec(),
        });
    }
    Ok(())
}

/// One discriminator update: real clips toward 1, `fake` toward 0. Returns the
/// loss before the update.
pub(crate) fn discriminator_update(
    d: &mut Discriminator,
    opt: &mut AdamState,
    real: &Tensor,
    fake: &Tensor,
    iteration: u64,
) -> Result<f64> {
    let tape = Tape::new();
    let binding = d.net.bind(&tape, true);
    let rv = tape.constant(real.clone());
    let fv = tape.constant(fake.clone());
    let lr = d.run(&binding, &rv, BatchNormMode::Train, None, |f| Ok(f.clone()))?;
    let lf = d.run(&binding, &fv, BatchNormMode::Train, None, |f| Ok(f.clone()))?;
    let loss = lr
        .logits
        .bce_with_logits(&targets(real.shape()[0], 1.0))?
        .add(&lf.logits.bce_with_logits(&targets(fake.shape()[0], 0.0))?)?;
    let value = loss.value().item() as f64;
    check_finite(value, "discriminator", iteration)?;
    tape.backward(&loss)?;
    adam_step(&mut d.net.params, &binding.grads(), opt)?;
    Ok(value)
}

/// Non-saturating adversarial loss of `video` under a frozen discriminator.
/// The discriminator's running statistics are left as they were.
pub(crate) fn frozen_adversarial(d: &mut Discriminator, tape: &Tape, video: &Var) -> Result<Var> {
    let saved = d.net.running.clone();
    let out = d.forward(tape, video, BatchNormMode::Train, false, None);
    d.net.running = saved;
    let n = video.shape()[0];
    Ok(out?.0.logits.bce_with_logits(&targets(n, 1.0))?)
}

/// `lambda * mean(|m|)` on the tape, if the generator has a mask.
pub(crate) fn sparsity_var(out: &GenOutput, lambda: f64) -> Option<Var> {
    out.parts.as_ref().map(|p| p.mask.abs().mean().affine(lambda, 0.0))
}

impl GanTrainer {
    /// Fresh networks initialized from the config seed.
    pub fn new(net: NetConfig, arch: Arch, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let generator = Generator::new(net, arch, &mut root.derive(1))?;
        let discriminator = Discriminator::new(net, &mut root.derive(2))?;
        Ok(Self {
            config,
            generator,
            discriminator,
            g_opt: AdamState::new(config.lr, config.beta1),
            d_opt: AdamState::new(config.lr, config.beta1),
            rng: root.derive(3),
            iteration: 0,
        })
    }

    pub fn net_config(&self) -> NetConfig {
        self.generator.config
    }

    pub fn sample_z(&mut self, n: usize) -> Tensor {
        sample_latent(n, self.net_config().latent_dim, &mut self.rng)
    }

    /// Discriminator update against `G(z)`; the generator is not modified
    /// apart from its batch-norm running statistics.
    pub fn d_step(&mut self, real: &Tensor, z: &Tensor) -> Result<f64> {
        check_batch(&self.net_config(), real)?;
        let fake = self.generator.sample(z, BatchNormMode::Train)?;
        discriminator_update(&mut self.discriminator, &mut self.d_opt, real, &fake, self.iteration)
    }

    /// Generator update against a frozen discriminator. Returns
    /// `(total, adversarial, sparsity, mask mean)`.
    pub fn g_step(&mut self, z: &Tensor) -> Result<(f64, f64, f64, Option<f64>)> {
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let binding = self.generator.net.bind(&tape, true);
        let out = self.generator.run(&binding, &zv, BatchNormMode::Train, None)?;
        let adv = frozen_adversarial(&mut self.discriminator, &tape, &out.video)?;
        let adv_value = adv.value().item() as f64;
        let (total, sparsity, mask_mean) = match sparsity_var(&out, self.config.lambda_mask) {
            Some(s) => {
                let m = out.parts.as_ref().unwrap().mask.value();
                let mean = super::mask_l1_mean(&m);
                (adv.add(&s)?, sparsity_term(&m, self.config.lambda_mask), Some(mean))
            }
            None => (adv, 0.0, None),
        };
        let total_value = total.value().item() as f64;
        check_finite(total_value, "generator", self.iteration)?;
        tape.backward(&total)?;
        adam_step(&mut self.generator.net.params, &binding.grads(), &mut self.g_opt)?;
        Ok((total_value, adv_value, sparsity, mask_mean))
    }

    /// Losses for `real` and `z` under the current parameters, computed on
    /// copies so nothing (including running statistics) changes.
    pub fn losses(&self, real: &Tensor, z: &Tensor) -> Result<LossBreakdown> {
        check_batch(&self.net_config(), real)?;
        let mut g = self.generator.clone();
        let mut d = self.discriminator.clone();
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let (out, _) = g.forward(&tape, &zv, BatchNormMode::Train, false, None)?;
        let fake = tape.constant((*out.video.value()).clone());
        let rv = tape.constant(real.clone());
        let lr = d.forward(&tape, &rv, BatchNormMode::Train, false, None)?.0.logits;
        let lf = d.forward(&tape, &fake, BatchNormMode::Train, false, None)?.0.logits;
        let d_loss = lr.bce_with_logits(&targets(real.shape()[0], 1.0))?.value().item() as f64
            + lf.bce_with_logits(&targets(z.shape()[0], 0.0))?.value().item() as f64;
        let adv = frozen_adversarial(&mut d, &tape, &out.video)?.value().item() as f64;
        let sparsity = out
            .parts
            .as_ref()
            .map(|p| sparsity_term(&p.mask.value(), self.config.lambda_mask))
            .unwrap_or(0.0);
        Ok(LossBreakdown {
            d_loss,
            adversarial: adv,
            sparsity,
        })
    }

    /// One D update then one G update, both on the same latent batch.
    pub fn step(&mut self, real: &Tensor) -> Result<StepReport> {
        let z = self.sample_z(real.shape().first().copied().unwrap_or(0));
        let d_loss = self.d_step(real, &z)?;
        let (g_loss, adversarial, sparsity, mask_mean) = self.g_step(&z)?;
        self.iteration += 1;
        Ok(StepReport {
            iteration: self.iteration,
            d_loss,
            g_loss,
            adversarial,
            sparsity,
            rec: 0.0,
            mask_mean,
        })
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            meta: CheckpointMeta {
                kind: "gan".into(),
                config: self.net_config(),
                arch: Some(self.generator.arch),
                seed: self.config.seed,
                iteration: self.iteration,
                extra: serde_json::to_value(self.config).expect("config serializes"),
            },
            nets: [
                ("generator".to_string(), self.generator.net.clone()),
                ("discriminator".to_string(), self.discriminator.net.clone()),
            ]
            .into(),
            optimizers: [
                ("generator".to_string(), self.g_opt.clone()),
                ("discriminator".to_string(), self.d_opt.clone()),
            ]
            .into(),
        }
    }

    /// Resumes from a checkpoint written by [`GanTrainer::checkpoint`].
    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(ck.meta.extra.clone())
            .map_err(|e| TrainError::Config(format!("checkpoint train config: {e}")))?;
        let arch = ck.meta.arch.unwrap_or(Arch::TwoStream);
        let mut t = Self::new(ck.meta.config, arch, config)?;
        t.generator.net = ck.net("generator")?.clone();
        t.discriminator.net = ck.net("discriminator")?.clone();
        if let Some(o) = ck.optimizers.get("generator") {
            t.g_opt = o.clone();
        }
        if let Some(o) = ck.optimizers.get("discriminator") {
            t.d_opt = o.clone();
        }
        t.iteration = ck.meta.iteration;
        t.rng = Rng::new(config.seed).derive(3 + ck.meta.iteration);
        Ok(t)
    }
}

impl Trainer for GanTrainer {
    fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }

    fn train_step(&mut self, real: &Tensor) -> Result<StepReport> {
        self.step(real)
    }

    fn save(&self, path: &Path) -> Result<()> {
        Ok(self.checkpoint().save(path)?)
    }
}

/// One alternating update of `trainer` on a real batch `(B, 3, T, S, S)`.
pub fn gan_train_step(trainer: &mut GanTrainer, real: &Tensor) -> Result<StepReport> {
    trainer.step(real)
}
