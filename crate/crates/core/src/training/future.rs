use std::path::Path;

use crate::nets::checkpoint::{CheckpointMeta, ModelCheckpoint};
use crate::nets::{Arch, Discriminator, Encoder, Generator, NetConfig};
use crate::rng::Rng;
use crate::tensor::{adam_step, AdamState, BatchNormMode, Tape, Tensor};

use super::gan::{check_batch, discriminator_update, frozen_adversarial, sparsity_var};
use super::{
    check_finite, sparsity_term, RecNorm, Result, StepReport, TrainConfig, TrainError, Trainer,
};

/// Frame 0 of every clip in a `(B, 3, T, H, W)` batch, as `(B, 3, H, W)`.
pub fn first_frames(batch: &Tensor) -> Tensor {
    let s = batch.shape();
    let plane = s[3] * s[4];
    let mut data = Vec::with_capacity(s[0] * s[1] * plane);
    for nc in 0..s[0] * s[1] {
        data.extend_from_slice(&batch.data()[nc * s[2] * plane..][..plane]);
    }
    Tensor::new(vec![s[0], s[1], s[3], s[4]], data).expect("frame shape")
}

/// `lambda * mean((x0 - g0)^2)` (or mean absolute error for [`RecNorm::L1`]).
pub fn reconstruction_term(x0: &Tensor, g0: &Tensor, lambda: f64, norm: RecNorm) -> f64 {
    let n = x0.len() as f64;
    let total: f64 = x0
        .data()
        .iter()
        .zip(g0.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            match norm {
                RecNorm::L2 => d * d,
                RecNorm::L1 => d.abs(),
            }
        })
        .sum();
    lambda * total / n
}

/// Encoder in front of a generator, trained so the first generated frame
/// reproduces the input frame while the clip fools the discriminator.
#[derive(Debug, Clone)]
pub struct FutureTrainer {
    pub config: TrainConfig,
    pub encoder: Encoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub e_opt: AdamState,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
    pub rng: Rng,
    pub iteration: u64,
}

impl FutureTrainer {
    pub fn new(net: NetConfig, arch: Arch, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let opt = || AdamState::new(config.lr, config.beta1);
        Ok(Self {
            config,
            encoder: Encoder::new(net, &mut root.derive(4))?,
            generator: Generator::new(net, arch, &mut root.derive(1))?,
            discriminator: Discriminator::new(net, &mut root.derive(2))?,
            e_opt: opt(),
            g_opt: opt(),
            d_opt: opt(),
            rng: root.derive(3),
            iteration: 0,
        })
    }

    /// Predicted clips `(N, 3, T, S, S)` for input frames `(N, 3, S, S)`.
    pub fn predict(&mut self, x0: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let code = self.encoder.encode(x0, mode)?;
        Ok(self.generator.sample(&code, mode)?)
    }

    pub fn step(&mut self, real: &Tensor) -> Result<StepReport> {
        check_batch(&self.generator.config, real)?;
        let x0 = first_frames(real);
        let fake = self.predict(&x0, BatchNormMode::Train)?;
        let d_loss =
            discriminator_update(&mut self.discriminator, &mut self.d_opt, real, &fake, self.iteration)?;

        let tape = Tape::new();
        let x0v = tape.constant(x0.clone());
        let eb = self.encoder.net.bind(&tape, true);
        let gb = self.generator.net.bind(&tape, true);
        let (code, _) = self.encoder.run(&eb, &x0v, BatchNormMode::Train, None)?;
        let out = self.generator.run(&gb, &code, BatchNormMode::Train, None)?;
        let adv = frozen_adversarial(&mut self.discriminator, &tape, &out.video)?;
        let g0 = out.video.select_time(0)?;
        let diff = x0v.sub(&g0)?;
        let dist = match self.config.rec_norm {
            RecNorm::L2 => diff.square(),
            RecNorm::L1 => diff.abs(),
        };
        let rec = dist.mean().affine(self.config.lambda_rec, 0.0);
        let mut total = adv.add(&rec)?;
        let (mut sparsity, mut mask_mean) = (0.0, None);
        if let Some(s) = sparsity_var(&out, self.config.lambda_mask) {
            total = total.add(&s)?;
            let m = out.parts.as_ref().unwrap().mask.value();
            sparsity = sparsity_term(&m, self.config.lambda_mask);
            mask_mean = Some(super::mask_l1_mean(&m));
        }
        let total_value = total.value().item() as f64;
        check_finite(total_value, "generator", self.iteration)?;
        tape.backward(&total)?;
        adam_step(&mut self.generator.net.params, &gb.grads(), &mut self.g_opt)?;
        adam_step(&mut self.encoder.net.params, &eb.grads(), &mut self.e_opt)?;
        self.iteration += 1;
        Ok(StepReport {
            iteration: self.iteration,
            d_loss,
            g_loss: total_value,
            adversarial: adv.value().item() as f64,
            sparsity,
            rec: reconstruction_term(&x0, &g0.value(), self.config.lambda_rec, self.config.rec_norm),
            mask_mean,
        })
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            meta: CheckpointMeta {
                kind: "future".into(),
                config: self.generator.config,
                arch: Some(self.generator.arch),
                seed: self.config.seed,
                iteration: self.iteration,
                extra: serde_json::to_value(self.config).expect("config serializes"),
            },
            nets: [
                ("encoder".to_string(), self.encoder.net.clone()),
                ("generator".to_string(), self.generator.net.clone()),
                ("discriminator".to_string(), self.discriminator.net.clone()),
            ]
            .into(),
            optimizers: [
                ("encoder".to_string(), self.e_opt.clone()),
                ("generator".to_string(), self.g_opt.clone()),
                ("discriminator".to_string(), self.d_opt.clone()),
            ]
            .into(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(ck.meta.extra.clone())
            .map_err(|e| TrainError::Config(format!("checkpoint train config: {e}")))?;
        let mut t = Self::new(ck.meta.config, ck.meta.arch.unwrap_or(Arch::TwoStream), config)?;
        t.encoder.net = ck.net("encoder")?.clone();
        t.generator.net = ck.net("generator")?.clone();
        t.discriminator.net = ck.net("discriminator")?.clone();
        for (name, opt) in [("encoder", &mut t.e_opt), ("generator", &mut t.g_opt), ("discriminator", &mut t.d_opt)] {
            if let Some(o) = ck.optimizers.get(name) {
                *opt = o.clone();
            }
        }
        t.iteration = ck.meta.iteration;
        t.rng = Rng::new(config.seed).derive(3 + ck.meta.iteration);
        Ok(t)
    }
}

impl Trainer for FutureTrainer {
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
