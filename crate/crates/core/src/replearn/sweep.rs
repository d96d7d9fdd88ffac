use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::nets::Discriminator;
use crate::rng::Rng;

use super::finetune::{finetune, FinetuneConfig, Init};
use super::{LabeledClipSet, ReplearnError, Result};

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];

/// Per-class seeded shuffle keeping `round(fraction * n_c)` of each class,
/// returned in original order.
pub fn stratified_subset(set: &LabeledClipSet, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let mut rng = Rng::new(seed);
    let mut keep = Vec::new();
    for class in 0..set.classes {
        let mut rows: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
        if rows.is_empty() {
            continue;
        }
        let m = (fraction * rows.len() as f64).round() as usize;
        if m == 0 {
            return Err(ReplearnError::FractionTooSmall { fraction, class });
        }
        rng.shuffle(&mut rows);
        keep.extend_from_slice(&rows[..m.min(rows.len())]);
    }
    keep.sort_unstable();
    Ok(keep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub init: String,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub fraction: f64,
    pub finetuned: f64,
    pub random: f64,
    /// `finetuned / random`.
    pub gain: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,init,seed,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.fraction, r.init, r.seed, r.accuracy);
        }
        out
    }

    pub fn mean(&self, fraction: f64, init: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.fraction == fraction && r.init == init)
            .map(|r| r.accuracy)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// One line per fraction with both inits present.
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut fractions: Vec<f64> = self.rows.iter().map(|r| r.fraction).collect();
        fractions.sort_by(f64::total_cmp);
        fractions.dedup();
        fractions
            .into_iter()
            .filter_map(|f| {
                let (ft, rd) = (self.mean(f, "finetuned")?, self.mean(f, "random")?);
                Some(SweepSummary {
                    fraction: f,
                    finetuned: ft,
                    random: rd,
                    gain: ft / rd,
                })
            })
            .collect()
    }
}

/// Fine-tunes from `pretrained` and from random initialization on stratified
/// label fractions, one cell per fraction, init and seed. Cells run in parallel.
pub fn data_fraction_sweep(
    pretrained: &Discriminator,
    train: &LabeledClipSet,
    test: &LabeledClipSet,
    fractions: &[f64],
    seeds: &[u64],
    cfg: &FinetuneConfig,
) -> Result<SweepTable> {
    train.require_non_empty()?;
    let mut cells = Vec::new();
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(ReplearnError::InvalidData(format!("fraction {fraction} outside (0, 1]")));
        }
        for &seed in seeds {
            let subset = train.subset(&stratified_subset(train, fraction, seed)?);
            for init in ["finetuned", "random"] {
                cells.push((fraction, seed, init, subset.clone()));
            }
        }
    }
    let rows = cells
        .into_par_iter()
        .map(|(fraction, seed, name, subset)| {
            let init = match name {
                "finetuned" => Init::Pretrained(pretrained.clone()),
                _ => Init::Random(pretrained.config),
            };
            let r = finetune(init, &subset, test, &FinetuneConfig { seed, ..*cfg })?;
            Ok(SweepRow {
                fraction,
                init: name.into(),
                seed,
                accuracy: r.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}
