use crate::nets::{Discriminator, NetConfig};
use crate::rng::Rng;
use crate::tensor::{adam_step, AdamState, BatchNormMode, Tape, Tensor};

use super::{LabeledClipSet, ReplearnError, Result};

pub const HEAD: &str = "cls.out";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 16,
            lr: 1e-4,
            beta1: 0.9,
            dropout: 0.5,
            seed: 0,
        }
    }
}

/// Where the backbone comes from.
#[derive(Debug, Clone)]
pub enum Init {
    Pretrained(Discriminator),
    Random(NetConfig),
}

/// Discriminator trunk with a K-way head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub net: Discriminator,
    pub classes: usize,
}

impl Classifier {
    pub fn new(init: Init, classes: usize, rng: &mut Rng) -> Result<Self> {
        if classes < 2 {
            return Err(ReplearnError::TooFewClasses(classes));
        }
        let mut net = match init {
            Init::Pretrained(d) => d,
            Init::Random(config) => Discriminator::new(config, &mut rng.derive(1))?,
        };
        net.replace_head(HEAD, classes, &mut rng.derive(2))?;
        Ok(Self { net, classes })
    }

    /// `(N, K)` logits in eval mode.
    pub fn logits(&mut self, clips: &Tensor) -> Result<Tensor> {
        Ok(self.net.logits(clips, BatchNormMode::Eval)?)
    }

    /// Arg-max class per clip; ties go to the lowest index.
    pub fn predict(&mut self, set: &LabeledClipSet) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(set.len());
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(32) {
            let logits = self.logits(&set.batch(chunk)?)?;
            out.extend(logits.data().chunks(self.classes).map(argmax));
        }
        Ok(out)
    }

    pub fn accuracy(&mut self, set: &LabeledClipSet) -> Result<f64> {
        set.require_non_empty()?;
        let pred = self.predict(set)?;
        Ok(pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count() as f64 / set.len() as f64)
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub classifier: Classifier,
    pub accuracy: f64,
    pub losses: Vec<f64>,
}

fn check_sets(train: &LabeledClipSet, test: &LabeledClipSet) -> Result<()> {
    train.validate()?;
    test.validate()?;
    train.require_non_empty()?;
    test.require_non_empty()?;
    if train.classes != test.classes {
        return Err(ReplearnError::InvalidData("train and test disagree on class count".into()));
    }
    super::check_disjoint(train, test)
}

/// Trains every layer with Adam under softmax cross-entropy, dropout on the
/// penultimate features during training only; reports test accuracy.
pub fn finetune(init: Init, train: &LabeledClipSet, test: &LabeledClipSet, cfg: &FinetuneConfig) -> Result<FinetuneResult> {
    check_sets(train, test)?;
    if cfg.batch_size < 2 {
        return Err(ReplearnError::InvalidData("batch_size must be >= 2".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut clf = Classifier::new(init, train.classes, &mut root.derive(1))?;
    let mut rng = root.derive(2);
    let mut opt = AdamState::new(cfg.lr, cfg.beta1);
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(train.len())).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let tape = Tape::new();
        let x = tape.constant(train.batch(&idx)?);
        let rate = cfg.dropout;
        let drop_rng = &mut rng;
        let (out, binding) = clf
            .net
            .forward_with(&tape, &x, BatchNormMode::Train, true, None, |f| Ok(f.dropout(rate, true, drop_rng)))?;
        let loss = out.logits.softmax_cross_entropy(&labels)?;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(ReplearnError::InvalidData(format!("non-finite loss at step {}", losses.len() + 1)));
        }
        tape.backward(&loss)?;
        adam_step(&mut clf.net.net.params, &binding.grads(), &mut opt)?;
        losses.push(value);
    }
    let accuracy = clf.accuracy(test)?;
    Ok(FinetuneResult {
        classifier: clf,
        accuracy,
        losses,
    })
}

/// Multinomial logistic regression on fixed feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LogisticRegression {
    /// Full-batch gradient descent on standardized features with a small L2 penalty.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, epochs: usize) -> Self {
        let n = features.len();
        let d = features.first().map_or(0, Vec::len);
        let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if v > 1e-12 { v.sqrt().recip() } else { 0.0 }
            })
            .collect();
        let mut m = Self {
            weights: vec![vec![0.0; d]; classes],
            bias: vec![0.0; classes],
            mean,
            scale,
        };
        let xs: Vec<Vec<f64>> = features.iter().map(|f| m.standardize(f)).collect();
        let (lr, l2) = (0.5, 1e-4);
        for _ in 0..epochs {
            let mut gw = vec![vec![0.0; d]; classes];
            let mut gb = vec![0.0; classes];
            for (x, &y) in xs.iter().zip(labels) {
                let p = m.probs_std(x);
                for k in 0..classes {
                    let e = p[k] - if k == y { 1.0 } else { 0.0 };
                    gb[k] += e / n as f64;
                    for j in 0..d {
                        gw[k][j] += e * x[j] / n as f64;
                    }
                }
            }
            for k in 0..classes {
                m.bias[k] -= lr * gb[k];
                for j in 0..d {
                    m.weights[k][j] -= lr * (gw[k][j] + l2 * m.weights[k][j]);
                }
            }
        }
        m
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect()
    }

    fn probs_std(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, f: &[f64]) -> usize {
        let p = self.probs_std(&self.standardize(f));
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features.iter().zip(labels).filter(|(f, &l)| self.predict(f) == l).count();
        hits as f64 / labels.len() as f64
    }
}

/// Flattened penultimate features in eval mode.
pub fn features(net: &mut Discriminator, set: &LabeledClipSet) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(32) {
        let tape = Tape::new();
        let x = tape.constant(set.batch(chunk)?);
        let (o, _) = net.forward(&tape, &x, BatchNormMode::Eval, false, None)?;
        let f = o.features.value();
        let per = f.len() / chunk.len();
        out.extend(f.data().chunks(per).map(|r| r.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

/// Frozen backbone, logistic regression on its penultimate features.
/// Returns the test accuracy.
pub fn linear_probe(backbone: &Discriminator, train: &LabeledClipSet, test: &LabeledClipSet, epochs: usize) -> Result<f64> {
    check_sets(train, test)?;
    let mut net = backbone.clone();
    let ftr = features(&mut net, train)?;
    let fte = features(&mut net, test)?;
    let lr = LogisticRegression::fit(&ftr, &train.labels, train.classes, epochs);
    Ok(lr.accuracy(&fte, &test.labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SpriteWorld;
    use crate::nets::Scale;
    use crate::replearn::Split;

    fn toy() -> (LabeledClipSet, LabeledClipSet) {
        let w = SpriteWorld::new(8, 16);
        (
            LabeledClipSet::sprite_actions(&w, 24, 1, Split::Train),
            LabeledClipSet::sprite_actions(&w, 12, 2, Split::Test),
        )
    }

    #[test]
    fn random_init_learns_directions() {
        let (train, test) = toy();
        let cfg = FinetuneConfig {
            steps: 150,
            lr: 1e-3,
            ..Default::default()
        };
        let r = finetune(Init::Random(NetConfig::at_scale(Scale::Quarter)), &train, &test, &cfg).unwrap();
        assert!(r.accuracy > 0.9, "{}", r.accuracy);
        assert!(r.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn zero_head_scores_chance() {
        let (_, test) = toy();
        let mut clf = Classifier::new(Init::Random(NetConfig::at_scale(Scale::Quarter)), 4, &mut Rng::new(0)).unwrap();
        for (k, v) in clf.net.net.params.iter_mut() {
            if k.starts_with(HEAD) {
                v.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        // Uniform logits pick class 0; the balanced test set holds 1/4 of it.
        assert_eq!(clf.accuracy(&test).unwrap(), 0.25);
        let a = clf.logits(&test.batch(&[0, 1, 2]).unwrap()).unwrap();
        let b = clf.logits(&test.batch(&[0, 1, 2]).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_leaves_backbone_untouched() {
        let (train, test) = toy();
        let d = Discriminator::new(NetConfig::at_scale(Scale::Quarter), &mut Rng::new(3)).unwrap();
        let before = d.net.param_hash();
        let acc = linear_probe(&d, &train, &test, 200).unwrap();
        assert_eq!(d.net.param_hash(), before);
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn probe_does_not_beat_finetuning() {
        let (train, test) = toy();
        let d = Discriminator::new(NetConfig::at_scale(Scale::Quarter), &mut Rng::new(6)).unwrap();
        let probe = linear_probe(&d, &train, &test, 300).unwrap();
        let cfg = FinetuneConfig {
            steps: 150,
            lr: 1e-3,
            ..Default::default()
        };
        let tuned = finetune(Init::Pretrained(d), &train, &test, &cfg).unwrap().accuracy;
        assert!(probe <= tuned, "{probe} > {tuned}");
    }

    #[test]
    fn logistic_regression_separable() {
        let mut rng = Rng::new(1);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..90 {
            let c = i % 3;
            xs.push(vec![c as f64 * 3.0 + rng.normal() * 0.3, -(c as f64) + rng.normal() * 0.3]);
            ys.push(c);
        }
        let m = LogisticRegression::fit(&xs, &ys, 3, 300);
        assert_eq!(m.accuracy(&xs, &ys), 1.0);
    }

    #[test]
    fn errors() {
        let (train, test) = toy();
        let cfg = FinetuneConfig::default();
        let empty = train.subset(&[]);
        assert!(matches!(
            finetune(Init::Random(NetConfig::at_scale(Scale::Quarter)), &empty, &test, &cfg),
            Err(ReplearnError::EmptySplit(_))
        ));
        let mut bad = train.clone();
        bad.labels[0] = 9;
        assert!(matches!(
            finetune(Init::Random(NetConfig::at_scale(Scale::Quarter)), &bad, &test, &cfg),
            Err(ReplearnError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn dropout_is_unbiased() {
        let tape: Tape<f32> = Tape::new();
        let x = tape.constant(Tensor::full(&[100_000], 1.0));
        let y = x.dropout(0.5, true, &mut Rng::new(4));
        let mean = y.value().mean() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        let e = x.dropout(0.5, false, &mut Rng::new(4));
        assert_eq!(*e.value(), *x.value());
    }
}
