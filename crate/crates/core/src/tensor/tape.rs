//! Define-by-run reverse-mode differentiation.
//!
//! Every op on a [`Var`] evaluates eagerly and appends a node to the shared
//! [`Tape`]. Node ids are assigned in evaluation order, so walking the tape
//! backwards visits every node after all of its consumers.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::conv::{self, ConvDims, ConvSpec};
use super::{Element, Result, Tensor, TensorError};
use crate::rng::Rng;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pointwise {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Pointwise {
    /// Parses `relu`, `leaky_relu` (slope 0.2), `leaky_relu:<slope>`, `sigmoid`, `tanh`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Self::Relu),
            "leaky_relu" => Ok(Self::LeakyRelu(0.2)),
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            other => other
                .strip_prefix("leaky_relu:")
                .and_then(|s| s.parse().ok())
                .map(Self::LeakyRelu)
                .ok_or_else(|| TensorError::UnknownKind(other.to_string())),
        }
    }

    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Self::Relu => x.max(T::zero()),
            Self::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_f64(slope)
                }
            }
            Self::Sigmoid => sigmoid(x),
            Self::Tanh => x.tanh(),
        }
    }

    fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            Self::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::LeakyRelu(slope) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64(slope)
                }
            }
            Self::Sigmoid => y * (T::one() - y),
            Self::Tanh => T::one() - y * y,
        }
    }
}

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Element>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Exponential moving averages of per-channel batch statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        dims: ConvDims,
        transpose: bool,
    },
    Pointwise {
        input: usize,
        kind: Pointwise,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        batch: usize,
        train: bool,
    },
    BceWithLogits {
        logits: usize,
        targets: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine {
        input: usize,
        scale: T,
    },
    Expand {
        input: usize,
        from: Vec<usize>,
    },
    Reshape(usize),
    SelectTime {
        input: usize,
        t: usize,
        frames: usize,
    },
    Sum(usize),
    Mean(usize),
    Abs(usize),
    Square(usize),
    Dropout {
        input: usize,
        mask: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

#[derive(Debug, Default)]
struct Inner<T> {
    nodes: Vec<Node<T>>,
}

/// Computation record shared by all [`Var`]s of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T: Element = f32> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone)]
pub struct Var<T: Element = f32> {
    tape: Tape<T>,
    id: usize,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable (or otherwise differentiated) input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<T> {
        let op = if requires_grad { op } else { Op::Leaf };
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.inner.borrow().nodes[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Clears accumulated gradients on every leaf.
    pub fn zero_grad(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    /// Reverse-mode accumulation from a scalar `loss` into every leaf that
    /// requires a gradient. Repeated calls add to existing gradients.
    pub fn backward(&self, loss: &Var<T>) -> Result<()> {
        assert!(self.same(&loss.tape), "loss belongs to a different tape");
        let inner = self.inner.borrow();
        let root = &inner.nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::Detached);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    leaf_grads.push((id, g));
                }
                continue;
            }
            for (parent, contribution) in backward_op(&inner.nodes, node, &g) {
                if !inner.nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        drop(inner);
        let mut inner = self.inner.borrow_mut();
        for (id, g) in leaf_grads {
            let node = &mut inner.nodes[id];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &c)| *a += c),
                slot @ None => {
                    *slot = Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
            }
        }
        Ok(())
    }
}

fn backward_op<T: Element>(nodes: &[Node<T>], node: &Node<T>, g: &[T]) -> Vec<(usize, Vec<T>)> {
    let val = |id: usize| &nodes[id].value;
    let needs = |id: usize| nodes[id].requires_grad;
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Conv {
            input,
            weight,
            bias,
            dims,
            transpose,
        } => {
            let (x, w) = (val(*input), val(*weight));
            if *transpose {
                if needs(*input) {
                    out.push((*input, conv::small_grad(g, w.data(), dims)));
                }
                if needs(*weight) {
                    out.push((*weight, conv::weight_grad(x.data(), g, dims)));
                }
                if let Some(b) = bias {
                    out.push((*b, conv::channel_sums(g, dims.batch, dims.large_channels)));
                }
            } else {
                if needs(*input) {
                    out.push((*input, conv::large_grad(g, w.data(), dims)));
                }
                if needs(*weight) {
                    out.push((*weight, conv::weight_grad(g, x.data(), dims)));
                }
                if let Some(b) = bias {
                    out.push((*b, conv::channel_sums(g, dims.batch, dims.small_channels)));
                }
            }
        }
        Op::Pointwise { input, kind } => {
            let x = val(*input);
            let grad = x
                .data()
                .iter()
                .zip(node.value.data())
                .zip(g)
                .map(|((&x, &y), &g)| g * kind.derivative(x, y))
                .collect();
            out.push((*input, grad));
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            normalized,
            inv_std,
            batch,
            train,
        } => {
            let channels = inv_std.len();
            let per = normalized.len() / (batch * channels);
            let gam = val(*gamma);
            let mut sum_g = vec![T::zero(); channels];
            let mut sum_gx = vec![T::zero(); channels];
            for (i, (chunk_g, chunk_x)) in g.chunks(per).zip(normalized.chunks(per)).enumerate() {
                let c = i % channels;
                for (&gv, &xv) in chunk_g.iter().zip(chunk_x) {
                    sum_g[c] += gv;
                    sum_gx[c] += gv * xv;
                }
            }
            if needs(*input) {
                let m = T::from_f64((batch * per) as f64);
                let mut dx = vec![T::zero(); g.len()];
                for (i, ((dst, chunk_g), chunk_x)) in dx
                    .chunks_mut(per)
                    .zip(g.chunks(per))
                    .zip(normalized.chunks(per))
                    .enumerate()
                {
                    let c = i % channels;
                    let scale = gam.data()[c] * inv_std[c];
                    if *train {
                        let k = scale / m;
                        for ((d, &gv), &xv) in dst.iter_mut().zip(chunk_g).zip(chunk_x) {
                            *d = k * (m * gv - sum_g[c] - xv * sum_gx[c]);
                        }
                    } else {
                        for (d, &gv) in dst.iter_mut().zip(chunk_g) {
                            *d = scale * gv;
                        }
                    }
                }
                out.push((*input, dx));
            }
            out.push((*gamma, sum_gx));
            out.push((*beta, sum_g));
        }
        Op::BceWithLogits { logits, targets } => {
            let x = val(*logits);
            let n = T::from_f64(targets.len() as f64);
            let grad = x
                .data()
                .iter()
                .zip(targets)
                .map(|(&x, &t)| g[0] * (sigmoid(x) - t) / n)
                .collect();
            out.push((*logits, grad));
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let n = labels.len();
            let k = probs.len() / n;
            let scale = g[0] / T::from_f64(n as f64);
            let mut grad: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &l) in labels.iter().enumerate() {
                grad[i * k + l] -= scale;
            }
            out.push((*logits, grad));
        }
        Op::Add(a, b) => {
            out.push((*a, g.to_vec()));
            out.push((*b, g.to_vec()));
        }
        Op::Sub(a, b) => {
            out.push((*a, g.to_vec()));
            out.push((*b, g.iter().map(|&v| -v).collect()));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if needs(*a) {
                out.push((*a, g.iter().zip(vb.data()).map(|(&g, &y)| g * y).collect()));
            }
            if needs(*b) {
                out.push((*b, g.iter().zip(va.data()).map(|(&g, &x)| g * x).collect()));
            }
        }
        Op::Affine { input, scale } => {
            out.push((*input, g.iter().map(|&v| v * *scale).collect()));
        }
        Op::Expand { input, from } => {
            let mut acc = vec![T::zero(); from.iter().product()];
            for_each_broadcast(from, node.value.shape(), |src, dst| acc[src] += g[dst]);
            out.push((*input, acc));
        }
        Op::Reshape(input) => out.push((*input, g.to_vec())),
        Op::SelectTime { input, t, frames } => {
            let x = val(*input);
            let plane: usize = x.shape()[3..].iter().product();
            let mut acc = vec![T::zero(); x.len()];
            for (i, chunk) in g.chunks(plane).enumerate() {
                let off = (i * frames + t) * plane;
                acc[off..off + plane].copy_from_slice(chunk);
            }
            out.push((*input, acc));
        }
        Op::Sum(input) => out.push((*input, vec![g[0]; val(*input).len()])),
        Op::Mean(input) => {
            let n = val(*input).len();
            out.push((*input, vec![g[0] / T::from_f64(n as f64); n]));
        }
        Op::Abs(input) => {
            let x = val(*input);
            let grad = x
                .data()
                .iter()
                .zip(g)
                .map(|(&x, &g)| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .collect();
            out.push((*input, grad));
        }
        Op::Square(input) => {
            let x = val(*input);
            let two = T::from_f64(2.0);
            out.push((*input, x.data().iter().zip(g).map(|(&x, &g)| two * x * g).collect()));
        }
        Op::Dropout { input, mask } => {
            out.push((*input, g.iter().zip(mask).map(|(&g, &m)| g * m).collect()));
        }
    }
    out
}

/// Calls `f(source_index, target_index)` for every element of `to`, where the
/// source shape `from` has the same rank with 1 on broadcast axes.
fn for_each_broadcast(from: &[usize], to: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = to.len();
    let mut src_strides = vec![0; rank];
    let mut s = 1;
    for a in (0..rank).rev() {
        src_strides[a] = if from[a] == 1 { 0 } else { s };
        s *= from[a];
    }
    let total: usize = to.iter().product();
    let mut index = vec![0; rank];
    let mut src = 0;
    for dst in 0..total {
        f(src, dst);
        for a in (0..rank).rev() {
            index[a] += 1;
            src += src_strides[a];
            if index[a] < to[a] {
                break;
            }
            src -= src_strides[a] * to[a];
            index[a] = 0;
        }
    }
}

fn shape_err(axis: &str, expected: usize, actual: usize) -> TensorError {
    TensorError::ShapeMismatch {
        axis: axis.to_string(),
        expected,
        actual,
    }
}

impl<T: Element> Var<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<T> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<T>, value: Tensor<T>, op: Op<T>) -> Var<T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn check_same(&self, other: &Var<T>) -> Result<(Rc<Tensor<T>>, Rc<Tensor<T>>)> {
        assert!(self.tape.same(&other.tape), "vars from different tapes");
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::InvalidShape(
                b.shape().to_vec(),
                format!("expected {:?}", a.shape()),
            ));
        }
        Ok((a, b))
    }

    fn conv_impl(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        spec: &ConvSpec,
        transpose: bool,
        rank: usize,
    ) -> Result<Var<T>> {
        let x = self.value();
        if x.ndim() != rank {
            return Err(TensorError::InvalidShape(
                x.shape().to_vec(),
                format!("expected a rank-{rank} batched input"),
            ));
        }
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let dims = conv::validate_conv_args(x.shape(), spec, &w, b.as_deref(), transpose)?;
        let data = if transpose {
            conv::conv_transpose_forward(x.data(), w.data(), b.as_ref().map(|b| b.data()), &dims)
        } else {
            conv::conv_forward(x.data(), w.data(), b.as_ref().map(|b| b.data()), &dims)
        };
        let shape = if transpose {
            dims.large_shape(rank)
        } else {
            dims.small_shape(rank)
        };
        let rg = self.requires_grad()
            || weight.requires_grad()
            || bias.is_some_and(|b| b.requires_grad());
        Ok(self.tape.push(
            Tensor::new(shape, data)?,
            Op::Conv {
                input: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
                dims,
                transpose,
            },
            rg,
        ))
    }

    /// Cross-correlation over `(N, C, T, H, W)`.
    pub fn conv3d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: &ConvSpec) -> Result<Var<T>> {
        self.conv_impl(weight, bias, spec, false, 5)
    }

    pub fn conv3d_transpose(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        spec: &ConvSpec,
    ) -> Result<Var<T>> {
        self.conv_impl(weight, bias, spec, true, 5)
    }

    /// Cross-correlation over `(N, C, H, W)`; `spec` must be a 2D spec.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: &ConvSpec) -> Result<Var<T>> {
        self.conv_impl(weight, bias, spec, false, 4)
    }

    pub fn conv2d_transpose(
        &self,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
        spec: &ConvSpec,
    ) -> Result<Var<T>> {
        self.conv_impl(weight, bias, spec, true, 4)
    }

    pub fn pointwise(&self, kind: Pointwise) -> Var<T> {
        let x = self.value();
        let y = x.map(|v| kind.apply(v));
        self.unary(y, Op::Pointwise { input: self.id, kind })
    }

    pub fn relu(&self) -> Var<T> {
        self.pointwise(Pointwise::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        self.pointwise(Pointwise::LeakyRelu(slope))
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.pointwise(Pointwise::Sigmoid)
    }

    pub fn tanh(&self) -> Var<T> {
        self.pointwise(Pointwise::Tanh)
    }

    /// Per-channel normalization over batch and all trailing axes of an
    /// `(N, C, ...)` input. Train mode uses batch statistics and folds them
    /// into `running`; eval mode uses `running`.
    pub fn batch_norm(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        mode: BatchNormMode,
        running: &mut RunningStats<T>,
    ) -> Result<Var<T>> {
        let x = self.value();
        if x.ndim() < 2 {
            return Err(TensorError::InvalidShape(x.shape().to_vec(), "batch norm needs (N, C, ...)".into()));
        }
        let (batch, channels) = (x.shape()[0], x.shape()[1]);
        let per: usize = x.shape()[2..].iter().product();
        for (name, len) in [
            ("gamma", gamma.value().len()),
            ("beta", beta.value().len()),
            ("running mean", running.mean.len()),
        ] {
            if len != channels {
                return Err(shape_err(name, channels, len));
            }
        }
        let train = mode == BatchNormMode::Train;
        if train && batch < 2 {
            return Err(TensorError::BatchTooSmall(batch));
        }
        let eps = T::from_f64(BATCH_NORM_EPS);
        let (mean, var) = if train {
            let m = (batch * per) as f64;
            let mut mean = vec![0.0f64; channels];
            for (i, chunk) in x.data().chunks(per).enumerate() {
                mean[i % channels] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut var = vec![0.0f64; channels];
            for (i, chunk) in x.data().chunks(per).enumerate() {
                let c = i % channels;
                var[c] += chunk.iter().map(|v| (v.as_f64() - mean[c]).powi(2)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= m);
            let mom = BATCH_NORM_MOMENTUM;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for c in 0..channels {
                running.mean[c] = T::from_f64((1.0 - mom) * running.mean[c].as_f64() + mom * mean[c]);
                running.var[c] =
                    T::from_f64((1.0 - mom) * running.var[c].as_f64() + mom * var[c] * unbias);
            }
            (
                mean.into_iter().map(T::from_f64).collect::<Vec<_>>(),
                var.into_iter().map(T::from_f64).collect::<Vec<_>>(),
            )
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (gamma.value(), beta.value());
        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for (i, ((src, nrm), dst)) in x
            .data()
            .chunks(per)
            .zip(normalized.chunks_mut(per))
            .zip(out.chunks_mut(per))
            .enumerate()
        {
            let c = i % channels;
            for ((&v, n), o) in src.iter().zip(nrm.iter_mut()).zip(dst.iter_mut()) {
                *n = (v - mean[c]) * inv_std[c];
                *o = g.data()[c] * *n + b.data()[c];
            }
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.tape.push(
            Tensor::new(x.shape().to_vec(), out)?,
            Op::BatchNorm {
                input: self.id,
                gamma: gamma.id,
                beta: beta.id,
                normalized,
                inv_std,
                batch,
                train,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of logits against `targets` in `{0, 1}`,
    /// in the softplus form `max(x, 0) - x t + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&self, targets: &Tensor<T>) -> Result<Var<T>> {
        let x = self.value();
        if targets.len() != x.len() {
            return Err(shape_err("targets", x.len(), targets.len()));
        }
        let n = x.len() as f64;
        let total = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| (softplus(x) - x * t).as_f64())
            .sum::<f64>();
        Ok(self.unary(
            Tensor::scalar(T::from_f64(total / n)),
            Op::BceWithLogits {
                logits: self.id,
                targets: targets.data().to_vec(),
            },
        ))
    }

    /// Mean negative log-softmax at `labels` for `(N, K)` logits.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<T>> {
        let x = self.value();
        if x.ndim() != 2 || x.shape()[0] != labels.len() {
            return Err(TensorError::InvalidShape(x.shape().to_vec(), "expected (N, K) logits".into()));
        }
        let k = x.shape()[1];
        let mut probs = vec![T::zero(); x.len()];
        let mut total = 0.0f64;
        for (i, (row, p)) in x.data().chunks(k).zip(probs.chunks_mut(k)).enumerate() {
            if labels[i] >= k {
                return Err(TensorError::LabelOutOfRange { label: labels[i], classes: k });
            }
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut z = T::zero();
            for (pv, &v) in p.iter_mut().zip(row) {
                *pv = (v - max).exp();
                z += *pv;
            }
            p.iter_mut().for_each(|v| *v = *v / z);
            total += (max + z.ln() - row[labels[i]]).as_f64();
        }
        Ok(self.unary(
            Tensor::scalar(T::from_f64(total / labels.len() as f64)),
            Op::SoftmaxCrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let (a, b) = self.check_same(other)?;
        let v = Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect())?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let (a, b) = self.check_same(other)?;
        let v = Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect())?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (a, b) = self.check_same(other)?;
        let v = Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect())?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<T> {
        let (s, b) = (T::from_f64(scale), T::from_f64(shift));
        let v = self.value().map(|x| s * x + b);
        self.unary(v, Op::Affine { input: self.id, scale: s })
    }

    /// Broadcast unit axes up to `shape` (same rank).
    pub fn expand(&self, shape: &[usize]) -> Result<Var<T>> {
        let x = self.value();
        if x.ndim() != shape.len()
            || x.shape().iter().zip(shape).any(|(&f, &t)| f != t && f != 1)
        {
            return Err(TensorError::InvalidShape(
                shape.to_vec(),
                format!("cannot broadcast from {:?}", x.shape()),
            ));
        }
        let mut data = vec![T::zero(); shape.iter().product()];
        for_each_broadcast(x.shape(), shape, |s, d| data[d] = x.data()[s]);
        Ok(self.unary(
            Tensor::new(shape.to_vec(), data)?,
            Op::Expand {
                input: self.id,
                from: x.shape().to_vec(),
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Frame `t` of an `(N, C, T, H, W)` tensor, as `(N, C, H, W)`.
    pub fn select_time(&self, t: usize) -> Result<Var<T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 5 || t >= s[2] {
            return Err(TensorError::InvalidShape(s.to_vec(), format!("cannot select frame {t}")));
        }
        let plane = s[3] * s[4];
        let mut data = Vec::with_capacity(s[0] * s[1] * plane);
        for nc in 0..s[0] * s[1] {
            let off = (nc * s[2] + t) * plane;
            data.extend_from_slice(&x.data()[off..off + plane]);
        }
        Ok(self.unary(
            Tensor::new(vec![s[0], s[1], s[3], s[4]], data)?,
            Op::SelectTime {
                input: self.id,
                t,
                frames: s[2],
            },
        ))
    }

    pub fn sum(&self) -> Var<T> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<T> {
        let v = Tensor::scalar(self.value().mean());
        self.unary(v, Op::Mean(self.id))
    }

    pub fn abs(&self) -> Var<T> {
        let v = self.value().map(|x| x.abs());
        self.unary(v, Op::Abs(self.id))
    }

    pub fn square(&self) -> Var<T> {
        let v = self.value().map(|x| x * x);
        self.unary(v, Op::Square(self.id))
    }

    /// Inverted dropout: in training, zeroes each element with probability
    /// `rate` and scales survivors by `1 / (1 - rate)`; identity otherwise.
    pub fn dropout(&self, rate: f64, train: bool, rng: &mut Rng) -> Var<T> {
        if !train || rate <= 0.0 {
            return self.clone();
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let x = self.value();
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
            .collect();
        self.dropout_with_mask(mask)
    }

    /// Dropout with an explicit multiplicative mask.
    pub fn dropout_with_mask(&self, mask: Vec<T>) -> Var<T> {
        let x = self.value();
        assert_eq!(mask.len(), x.len());
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let v = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.unary(v, Op::Dropout { input: self.id, mask })
    }
}
