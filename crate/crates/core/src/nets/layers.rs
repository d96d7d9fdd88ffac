use std::collections::BTreeMap;

use crate::tensor::{BatchNormMode, ParamMap, RunningStats, Tape, Var};

use super::{
    compose, Arch, DiscOutput, GenOutput, LayerPlan, LayerSpec, NetError, Result, TwoStreamParts,
    LEAKY_SLOPE,
};

/// Parameters of one network placed on a tape.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub(super) fn new(tape: &Tape, params: &ParamMap, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| NetError::MissingParameter(name.to_string()))
    }

    /// Gradients of every bound parameter reached by the last backward pass.
    pub fn grads(&self) -> ParamMap {
        self.vars
            .iter()
            .filter_map(|(k, v)| v.grad().map(|g| (k.clone(), g)))
            .collect()
    }
}

/// Output shape of every layer of a forward pass, per sample.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerTrace {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl LayerTrace {
    pub fn shapes(&self, prefix: &str) -> Vec<Vec<usize>> {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, s)| s.clone())
            .collect()
    }
}

pub(super) struct Ctx<'a> {
    binding: &'a Binding,
    running: &'a mut BTreeMap<String, RunningStats<f32>>,
    mode: BatchNormMode,
    trace: Option<&'a mut LayerTrace>,
}

#[derive(Clone, Copy)]
enum Act {
    Relu,
    Leaky,
    Tanh,
    Sigmoid,
    None,
}

impl<'a> Ctx<'a> {
    pub(super) fn new(
        binding: &'a Binding,
        running: &'a mut BTreeMap<String, RunningStats<f32>>,
        mode: BatchNormMode,
        trace: Option<&'a mut LayerTrace>,
    ) -> Self {
        Self {
            binding,
            running,
            mode,
            trace,
        }
    }

    fn layer(&mut self, l: &LayerSpec, x: &Var, act: Act) -> Result<Var> {
        let w = self.binding.get(&format!("{}.w", l.name))?;
        let b = if l.bias {
            Some(self.binding.get(&format!("{}.b", l.name))?)
        } else {
            None
        };
        let mut y = match (l.planar, l.transpose) {
            (false, false) => x.conv3d(w, b, &l.spec)?,
            (false, true) => x.conv3d_transpose(w, b, &l.spec)?,
            (true, false) => x.conv2d(w, b, &l.spec)?,
            (true, true) => x.conv2d_transpose(w, b, &l.spec)?,
        };
        if l.batch_norm {
            let key = format!("{}.bn", l.name);
            let gamma = self.binding.get(&format!("{key}.gamma"))?;
            let beta = self.binding.get(&format!("{key}.beta"))?;
            let running = self
                .running
                .get_mut(&key)
                .ok_or_else(|| NetError::MissingParameter(key.clone()))?;
            y = y.batch_norm(gamma, beta, self.mode, running)?;
        }
        y = match act {
            Act::Relu => y.relu(),
            Act::Leaky => y.leaky_relu(LEAKY_SLOPE),
            Act::Tanh => y.tanh(),
            Act::Sigmoid => y.sigmoid(),
            Act::None => y,
        };
        if let Some(t) = self.trace.as_deref_mut() {
            t.entries.push((l.name.clone(), y.shape()[1..].to_vec()));
        }
        Ok(y)
    }
}

pub(super) fn generator(ctx: &mut Ctx, plan: &LayerPlan, arch: Arch, z: &Var) -> Result<GenOutput> {
    let n = z.shape()[0];
    let d = plan.config.latent_dim;
    let mut h = z.reshape(&[n, d, 1, 1, 1])?;
    for l in plan.generator_trunk() {
        h = ctx.layer(&l, &h, Act::Relu)?;
    }
    let foreground = ctx.layer(&plan.generator_head("fg.out", 3), &h, Act::Tanh)?;
    if arch == Arch::OneStream {
        return Ok(GenOutput {
            video: foreground,
            parts: None,
        });
    }
    let mask = ctx.layer(&plan.generator_head("mask.out", 1), &h, Act::Sigmoid)?;
    let mut b = z.reshape(&[n, d, 1, 1])?;
    let bg = plan.background();
    let last = bg.len() - 1;
    for (i, l) in bg.iter().enumerate() {
        b = ctx.layer(l, &b, if i == last { Act::Tanh } else { Act::Relu })?;
    }
    let video = compose(&foreground, &b, &mask)?;
    Ok(GenOutput {
        video,
        parts: Some(TwoStreamParts {
            foreground,
            background: b,
            mask,
        }),
    })
}

pub(super) fn discriminator(
    ctx: &mut Ctx,
    plan: &LayerPlan,
    prefix: &str,
    head: &str,
    channels: usize,
    x: &Var,
    penultimate: impl FnOnce(&Var) -> crate::tensor::Result<Var>,
) -> Result<DiscOutput> {
    let mut h = x.clone();
    let mut activations = Vec::with_capacity(4);
    for l in plan.discriminator_trunk(prefix) {
        h = ctx.layer(&l, &h, Act::Leaky)?;
        activations.push(h.clone());
    }
    let features = penultimate(&h)?;
    let out = ctx.layer(&plan.discriminator_head(head, channels), &features, Act::None)?;
    let n = x.shape()[0];
    let logits = if channels == 1 {
        out.reshape(&[n])?
    } else {
        out.reshape(&[n, channels])?
    };
    Ok(DiscOutput {
        logits,
        features: h,
        activations,
    })
}

pub(super) fn encoder(ctx: &mut Ctx, plan: &LayerPlan, x0: &Var) -> Result<(Var, Vec<Var>)> {
    let layers = plan.encoder();
    let last = layers.len() - 1;
    let mut h = x0.clone();
    let mut acts = Vec::with_capacity(last);
    for (i, l) in layers.iter().enumerate() {
        h = ctx.layer(l, &h, if i == last { Act::Tanh } else { Act::Leaky })?;
        if i < last {
            acts.push(h.clone());
        }
    }
    let n = x0.shape()[0];
    Ok((h.reshape(&[n, plan.config.latent_dim])?, acts))
}
