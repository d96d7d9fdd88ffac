//! Video generators, the spatio-temporal discriminator, and the frame encoder.
//!
//! Layer geometry comes from [`NetConfig::plan`]: the generator starts from a
//! `(t0, s0, s0)` volume produced by a unit-stride transposed convolution over
//! the latent code and doubles it four times; the discriminator and encoder run
//! the same chain in reverse with strided convolutions. At full scale this is
//! `(2,4,4) -> (4,8,8) -> (8,16,16) -> (16,32,32) -> (32,64,64)`.
//!
//! Configurations whose frame count is not a multiple of 16 (the quarter scale
//! uses 8 frames) keep time fixed in the layers closest to the latent code,
//! using a `3` tap, stride `1`, pad `1` temporal kernel there.

pub mod checkpoint;
pub mod export;
mod layers;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{
    BatchNormMode, ConvSpec, ParamMap, RunningStats, Tape, Tensor, TensorError, Var,
};

pub use layers::{Binding, LayerTrace};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("parameter `{0}` missing from the network")]
    MissingParameter(String),
    #[error("input shape {actual:?} does not match the network (expected {expected:?})")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

/// Desk-scale shrink factor applied to frames, frame size and channel widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Full,
    Half,
    Quarter,
}

impl Scale {
    pub fn divisor(self) -> usize {
        match self {
            Scale::Full => 1,
            Scale::Half => 2,
            Scale::Quarter => 4,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1" | "full" => Some(Scale::Full),
            "1/2" | "0.5" | "half" => Some(Scale::Half),
            "1/4" | "0.25" | "quarter" => Some(Scale::Quarter),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub frames: usize,
    pub size: usize,
    pub base_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            frames: 32,
            size: 64,
            base_channels: 64,
        }
    }
}

/// Generator variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    OneStream,
    TwoStream,
}

impl Arch {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one-stream" => Some(Arch::OneStream),
            "two-stream" => Some(Arch::TwoStream),
            _ => None,
        }
    }
}

/// Resolved per-layer geometry for a [`NetConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub config: NetConfig,
    /// Volume produced by the first generator layer.
    pub base_volume: [usize; 3],
    /// Channel widths from the latent side outwards, e.g. `[512, 256, 128, 64]`.
    pub widths: [usize; 4],
    /// For each of the four resampling layers (latent side first), whether it
    /// also resamples time.
    pub temporal: [bool; 4],
}

pub const MAX_WIDTH: usize = 512;
pub const LEAKY_SLOPE: f64 = 0.2;

impl NetConfig {
    pub fn at_scale(scale: Scale) -> Self {
        let d = scale.divisor();
        let full = Self::default();
        Self {
            frames: full.frames / d,
            size: full.size / d,
            base_channels: full.base_channels / d,
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 16 != 0 {
            return Err(NetError::Config(format!("size {} must be a positive multiple of 16", self.size)));
        }
        if self.frames == 0 || self.frames % 8 != 0 {
            return Err(NetError::Config(format!(
                "frames {} must be a positive multiple of 8",
                self.frames
            )));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(NetError::Config("latent_dim and base_channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<LayerPlan> {
        self.validate()?;
        let doublings = if self.frames % 16 == 0 { 4 } else { 3 };
        let mut temporal = [false; 4];
        for (i, t) in temporal.iter_mut().enumerate() {
            *t = i >= 4 - doublings;
        }
        let w = |k: u32| (self.base_channels << k).min(MAX_WIDTH);
        Ok(LayerPlan {
            config: *self,
            base_volume: [self.frames >> doublings, self.size / 16, self.size / 16],
            widths: [w(3), w(2), w(1), w(0)],
            temporal,
        })
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [3, self.frames, self.size, self.size]
    }
}

/// Static description of one convolution layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub spec: ConvSpec,
    pub transpose: bool,
    pub planar: bool,
    pub bias: bool,
    pub batch_norm: bool,
}

impl LayerSpec {
    fn new(name: String, spec: ConvSpec, transpose: bool, planar: bool) -> Self {
        Self {
            name,
            spec,
            transpose,
            planar,
            bias: false,
            batch_norm: true,
        }
    }

    fn output(mut self) -> Self {
        self.bias = true;
        self.batch_norm = false;
        self
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        if self.planar {
            self.spec.weight_shape_2d(self.transpose)
        } else {
            self.spec.weight_shape(self.transpose)
        }
    }

    pub fn out_channels(&self) -> usize {
        self.spec.out_channels
    }
}

fn resample3d(cin: usize, cout: usize, temporal: bool) -> ConvSpec {
    let (kt, st) = if temporal { (4, 2) } else { (3, 1) };
    ConvSpec::new3d(cin, cout, [kt, 4, 4], [st, 2, 2], [1, 1, 1])
}

fn resample2d(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::new2d(cin, cout, [4, 4], [2, 2], [1, 1])
}

impl LayerPlan {
    /// First layer: latent `(d,1,1,1)` to the base volume.
    fn stem3d(&self, cout: usize) -> ConvSpec {
        ConvSpec::new3d(self.config.latent_dim, cout, self.base_volume, [1; 3], [0; 3])
    }

    /// Shared trunk of the foreground and mask streams, latent side first.
    pub fn generator_trunk(&self) -> Vec<LayerSpec> {
        let w = self.widths;
        let mut layers = vec![LayerSpec::new("fg.0".into(), self.stem3d(w[0]), true, false)];
        for i in 1..4 {
            layers.push(LayerSpec::new(
                format!("fg.{i}"),
                resample3d(w[i - 1], w[i], self.temporal[i - 1]),
                true,
                false,
            ));
        }
        layers
    }

    /// Output layer of a 3D stream with `channels` outputs.
    pub fn generator_head(&self, name: &str, channels: usize) -> LayerSpec {
        LayerSpec::new(name.into(), resample3d(self.widths[3], channels, self.temporal[3]), true, false)
            .output()
    }

    /// Static background stream, `z -> (3, S, S)`.
    pub fn background(&self) -> Vec<LayerSpec> {
        let w = self.widths;
        let [_, s0, _] = self.base_volume;
        let mut layers = vec![LayerSpec::new(
            "bg.0".into(),
            ConvSpec::new2d(self.config.latent_dim, w[0], [s0, s0], [1, 1], [0, 0]),
            true,
            true,
        )];
        for i in 1..4 {
            layers.push(LayerSpec::new(format!("bg.{i}"), resample2d(w[i - 1], w[i]), true, true));
        }
        layers.push(LayerSpec::new("bg.out".into(), resample2d(w[3], 3), true, true).output());
        layers
    }

    /// Strided 3D trunk shared by the discriminator, the autoencoder's encoder
    /// and the action classifier, input side first. The first layer has no
    /// batch norm.
    pub fn discriminator_trunk(&self, prefix: &str) -> Vec<LayerSpec> {
        let w = self.widths;
        let chans = [3, w[3], w[2], w[1], w[0]];
        (0..4)
            .map(|i| {
                let mut l = LayerSpec::new(
                    format!("{prefix}.{i}"),
                    resample3d(chans[i], chans[i + 1], self.temporal[3 - i]),
                    false,
                    false,
                );
                if i == 0 {
                    l.batch_norm = false;
                    l.bias = true;
                }
                l
            })
            .collect()
    }

    /// Final valid convolution over the base volume to `channels` outputs.
    pub fn discriminator_head(&self, name: &str, channels: usize) -> LayerSpec {
        LayerSpec::new(
            name.into(),
            ConvSpec::new3d(self.widths[0], channels, self.base_volume, [1; 3], [0; 3]),
            false,
            false,
        )
        .output()
    }

    /// Strided 2D frame encoder, image side first.
    pub fn encoder(&self) -> Vec<LayerSpec> {
        let w = self.widths;
        let chans = [3, w[3], w[2], w[1], w[0]];
        let [_, s0, _] = self.base_volume;
        let mut layers: Vec<LayerSpec> = (0..4)
            .map(|i| {
                let mut l = LayerSpec::new(format!("enc.{i}"), resample2d(chans[i], chans[i + 1]), false, true);
                if i == 0 {
                    l.batch_norm = false;
                    l.bias = true;
                }
                l
            })
            .collect();
        layers.push(
            LayerSpec::new(
                "enc.out".into(),
                ConvSpec::new2d(w[0], self.config.latent_dim, [s0, s0], [1, 1], [0, 0]),
                false,
                true,
            )
            .output(),
        );
        layers
    }
}

/// Trainable tensors plus batch-norm running statistics of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetParams {
    pub params: ParamMap,
    pub running: BTreeMap<String, RunningStats<f32>>,
}

/// Weight init standard deviation.
pub const INIT_STD: f64 = 0.01;

impl NetParams {
    /// Gaussian weights (std 0.01), zero biases, unit batch-norm scale.
    pub fn init(layers: &[LayerSpec], rng: &mut Rng) -> Self {
        let mut net = NetParams::default();
        for l in layers {
            net.add_layer(l, rng);
        }
        net
    }

    pub fn add_layer(&mut self, l: &LayerSpec, rng: &mut Rng) {
        self.params.insert(
            format!("{}.w", l.name),
            Tensor::randn(&l.weight_shape(), INIT_STD, rng),
        );
        let c = l.out_channels();
        if l.bias {
            self.params.insert(format!("{}.b", l.name), Tensor::zeros(&[c]));
        }
        if l.batch_norm {
            self.params.insert(format!("{}.bn.gamma", l.name), Tensor::ones(&[c]));
            self.params.insert(format!("{}.bn.beta", l.name), Tensor::zeros(&[c]));
            self.running.insert(format!("{}.bn", l.name), RunningStats::new(c));
        }
    }

    pub fn bind(&self, tape: &Tape<f32>, trainable: bool) -> Binding {
        Binding::new(tape, &self.params, trainable)
    }

    /// Order-sensitive FNV-1a hash of every parameter's bits.
    pub fn param_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in &self.params {
            for b in name.bytes().chain(t.data().iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }
}

/// Output of a generator forward pass; the parts are present for two-stream.
#[derive(Debug, Clone)]
pub struct GenOutput {
    pub video: Var,
    pub parts: Option<TwoStreamParts>,
}

/// Foreground `(N,3,T,S,S)`, background `(N,3,S,S)`, and mask `(N,1,T,S,S)`.
#[derive(Debug, Clone)]
pub struct TwoStreamParts {
    pub foreground: Var,
    pub background: Var,
    pub mask: Var,
}

/// `m * f + (1 - m) * b`, with `m` broadcast over channels and `b` over time.
pub fn compose(foreground: &Var, background: &Var, mask: &Var) -> Result<Var> {
    let fs = foreground.shape();
    let bs = background.shape();
    let b5 = background.reshape(&[bs[0], bs[1], 1, bs[2], bs[3]])?.expand(&fs)?;
    let m = mask.expand(&fs)?;
    let inv = m.affine(-1.0, 1.0);
    Ok(m.mul(foreground)?.add(&inv.mul(&b5)?)?)
}

/// A video generator with its parameters.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: NetConfig,
    pub arch: Arch,
    pub net: NetParams,
}

impl Generator {
    pub fn new(config: NetConfig, arch: Arch, rng: &mut Rng) -> Result<Self> {
        let plan = config.plan()?;
        let mut net = NetParams::init(&plan.generator_trunk(), rng);
        net.add_layer(&plan.generator_head("fg.out", 3), rng);
        if arch == Arch::TwoStream {
            net.add_layer(&plan.generator_head("mask.out", 1), rng);
            for l in plan.background() {
                net.add_layer(&l, rng);
            }
        }
        Ok(Self { config, arch, net })
    }

    /// Forward pass from latent codes `(N, latent_dim)`.
    pub fn forward(
        &mut self,
        tape: &Tape,
        z: &Var,
        mode: BatchNormMode,
        trainable: bool,
        trace: Option<&mut LayerTrace>,
    ) -> Result<(GenOutput, Binding)> {
        let binding = self.net.bind(tape, trainable);
        let out = self.run(&binding, z, mode, trace)?;
        Ok((out, binding))
    }

    /// Forward pass against an existing binding of this generator's parameters.
    pub fn run(
        &mut self,
        binding: &Binding,
        z: &Var,
        mode: BatchNormMode,
        trace: Option<&mut LayerTrace>,
    ) -> Result<GenOutput> {
        let plan = self.config.plan()?;
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != self.config.latent_dim {
            return Err(NetError::InputShape {
                expected: vec![zs.first().copied().unwrap_or(1), self.config.latent_dim],
                actual: zs,
            });
        }
        let mut ctx = layers::Ctx::new(binding, &mut self.net.running, mode, trace);
        layers::generator(&mut ctx, &plan, self.arch, z)
    }

    /// Generated clips for latent codes `(N, latent_dim)`, without gradients.
    pub fn sample(&mut self, z: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let (out, _) = self.forward(&tape, &zv, mode, false, None)?;
        Ok((*out.video.value()).clone())
    }
}

/// Spatio-temporal discriminator (or any network on its trunk).
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: NetConfig,
    pub net: NetParams,
    pub prefix: String,
    pub head: String,
    pub out_channels: usize,
}

/// Logits `(N, out_channels)` (or `(N)` for one channel), the penultimate
/// features, and every trunk activation after its nonlinearity.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub logits: Var,
    pub features: Var,
    pub activations: Vec<Var>,
}

impl Discriminator {
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        Self::with_head(config, "d", "d.out", 1, rng)
    }

    pub fn with_head(
        config: NetConfig,
        prefix: &str,
        head: &str,
        out_channels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let plan = config.plan()?;
        let mut net = NetParams::init(&plan.discriminator_trunk(prefix), rng);
        net.add_layer(&plan.discriminator_head(head, out_channels), rng);
        Ok(Self {
            config,
            net,
            prefix: prefix.into(),
            head: head.into(),
            out_channels,
        })
    }

    /// Swap the final layer for a freshly initialized one with `channels` outputs.
    pub fn replace_head(&mut self, head: &str, channels: usize, rng: &mut Rng) -> Result<()> {
        let plan = self.config.plan()?;
        let old = format!("{}.", self.head);
        self.net.params.retain(|k, _| !k.starts_with(&old));
        self.net.add_layer(&plan.discriminator_head(head, channels), rng);
        self.head = head.into();
        self.out_channels = channels;
        Ok(())
    }

    pub fn trunk_layers(&self) -> Result<Vec<LayerSpec>> {
        Ok(self.config.plan()?.discriminator_trunk(&self.prefix))
    }

    pub fn forward(
        &mut self,
        tape: &Tape,
        x: &Var,
        mode: BatchNormMode,
        trainable: bool,
        trace: Option<&mut LayerTrace>,
    ) -> Result<(DiscOutput, Binding)> {
        self.forward_with(tape, x, mode, trainable, trace, |f| Ok(f.clone()))
    }

    /// Forward pass with `penultimate` applied to the trunk features before the
    /// head (used for dropout).
    pub fn forward_with(
        &mut self,
        tape: &Tape,
        x: &Var,
        mode: BatchNormMode,
        trainable: bool,
        trace: Option<&mut LayerTrace>,
        penultimate: impl FnOnce(&Var) -> crate::tensor::Result<Var>,
    ) -> Result<(DiscOutput, Binding)> {
        let binding = self.net.bind(tape, trainable);
        let out = self.run(&binding, x, mode, trace, penultimate)?;
        Ok((out, binding))
    }

    /// Forward pass against an existing binding of this network's parameters.
    pub fn run(
        &mut self,
        binding: &Binding,
        x: &Var,
        mode: BatchNormMode,
        trace: Option<&mut LayerTrace>,
        penultimate: impl FnOnce(&Var) -> crate::tensor::Result<Var>,
    ) -> Result<DiscOutput> {
        let plan = self.config.plan()?;
        let xs = x.shape();
        let expected = self.config.clip_shape();
        if xs.len() != 5 || xs[1..] != expected {
            let mut e = vec![xs.first().copied().unwrap_or(1)];
            e.extend_from_slice(&expected);
            return Err(NetError::InputShape { expected: e, actual: xs });
        }
        let mut ctx = layers::Ctx::new(binding, &mut self.net.running, mode, trace);
        layers::discriminator(
            &mut ctx,
            &plan,
            &self.prefix,
            &self.head,
            self.out_channels,
            x,
            penultimate,
        )
    }

    pub fn logits(&mut self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (out, _) = self.forward(&tape, &xv, mode, false, None)?;
        Ok((*out.logits.value()).clone())
    }
}

/// Frame encoder `(N,3,S,S) -> (N, latent_dim)` with a tanh-bounded code.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: NetConfig,
    pub net: NetParams,
}

impl Encoder {
    pub fn new(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        let plan = config.plan()?;
        Ok(Self {
            config,
            net: NetParams::init(&plan.encoder(), rng),
        })
    }

    pub fn forward(
        &mut self,
        tape: &Tape,
        x0: &Var,
        mode: BatchNormMode,
        trainable: bool,
        trace: Option<&mut LayerTrace>,
    ) -> Result<(Var, Vec<Var>, Binding)> {
        let binding = self.net.bind(tape, trainable);
        let (code, acts) = self.run(&binding, x0, mode, trace)?;
        Ok((code, acts, binding))
    }

    /// Forward pass against an existing binding; returns the code and the
    /// hidden activations.
    pub fn run(
        &mut self,
        binding: &Binding,
        x0: &Var,
        mode: BatchNormMode,
        trace: Option<&mut LayerTrace>,
    ) -> Result<(Var, Vec<Var>)> {
        let plan = self.config.plan()?;
        let xs = x0.shape();
        let s = self.config.size;
        if xs.len() != 4 || xs[1..] != [3, s, s] {
            return Err(NetError::InputShape {
                expected: vec![xs.first().copied().unwrap_or(1), 3, s, s],
                actual: xs,
            });
        }
        let mut ctx = layers::Ctx::new(binding, &mut self.net.running, mode, trace);
        layers::encoder(&mut ctx, &plan, x0)
    }

    pub fn encode(&mut self, x0: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let tape = Tape::new();
        let xv = tape.constant(x0.clone());
        let (code, _, _) = self.forward(&tape, &xv, mode, false, None)?;
        Ok((*code.value()).clone())
    }
}

/// Standard normal latent codes `(n, latent_dim)`.
pub fn sample_latent(n: usize, latent_dim: usize, rng: &mut Rng) -> Tensor {
    Tensor::randn(&[n, latent_dim], 1.0, rng)
}

#[cfg(test)]
mod tests;
