//! Discriminator features for action recognition: fine-tuning, linear
//! probes, label-fraction sweeps and hidden-unit visualization.

mod finetune;
mod sweep;
mod visualize;

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::datasets::SpriteWorld;
use crate::nets::NetError;
use crate::tensor::{Tensor, TensorError};
use crate::videoio::{read_clip, ClipError};

pub use finetune::{finetune, linear_probe, Classifier, FinetuneConfig, FinetuneResult, Init, LogisticRegression};
pub use sweep::{data_fraction_sweep, stratified_subset, SweepRow, SweepSummary, SweepTable, DEFAULT_FRACTIONS};
pub use visualize::{receptive_field, visualize_unit, write_report, RegionBox, UnitActivationReport, UnitEntry};

#[derive(Debug, Error)]
pub enum ReplearnError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0} split is empty")]
    EmptySplit(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("splits share clip id {0:?}")]
    OverlappingSplits(String),
    #[error("fraction {fraction} leaves class {class} without examples")]
    FractionTooSmall { fraction: f64, class: usize },
    #[error("invalid unit: {0}")]
    InvalidUnit(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ReplearnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledClipSet {
    pub clips: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub split: Split,
    pub classes: usize,
}

impl LabeledClipSet {
    pub fn new(clips: Vec<Tensor>, labels: Vec<usize>, ids: Vec<String>, split: Split, classes: usize) -> Result<Self> {
        let set = Self {
            clips,
            labels,
            ids,
            split,
            classes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(ReplearnError::TooFewClasses(self.classes));
        }
        if self.clips.len() != self.labels.len() || self.ids.len() != self.labels.len() {
            return Err(ReplearnError::InvalidData("clips, labels and ids differ in length".into()));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(ReplearnError::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(ReplearnError::EmptySplit(self.split.name().into()));
        }
        Ok(())
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            split: self.split,
            classes: self.classes,
        }
    }

    /// `(N, 3, T, H, W)` batch of rows `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let picked: Vec<Tensor> = indices.iter().map(|&i| self.clips[i].clone()).collect();
        Ok(Tensor::stack(&picked)?)
    }

    /// Sprite motion-direction clips, ids prefixed by `tag`.
    pub fn sprite_actions(world: &SpriteWorld, per_class: usize, seed: u64, split: Split) -> Self {
        let (clips, labels) = world.action_dataset(per_class, seed);
        let ids = (0..clips.len()).map(|i| format!("{}-{seed}-{i}", split.name())).collect();
        Self {
            clips,
            labels,
            ids,
            split,
            classes: 4,
        }
    }
}

pub fn check_disjoint(a: &LabeledClipSet, b: &LabeledClipSet) -> Result<()> {
    let ids: BTreeSet<&String> = a.ids.iter().collect();
    match b.ids.iter().find(|id| ids.contains(id)) {
        Some(id) => Err(ReplearnError::OverlappingSplits(id.clone())),
        None => Ok(()),
    }
}

/// Loads `<root>/{train,test}/<class>/*.tvclip`; classes are the sorted
/// subdirectory names of `train`. Ids are paths relative to `root`.
pub fn load_labeled_dir(root: &Path) -> Result<(LabeledClipSet, LabeledClipSet, Vec<String>)> {
    let mut classes: Vec<String> = std::fs::read_dir(root.join("train"))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    let load = |split: Split| -> Result<LabeledClipSet> {
        let (mut clips, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for (label, class) in classes.iter().enumerate() {
            let dir = root.join(split.name()).join(class);
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<_> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "tvclip"))
                .collect();
            files.sort();
            for f in files {
                clips.push(read_clip(&f)?);
                labels.push(label);
                ids.push(f.strip_prefix(root).unwrap_or(&f).to_string_lossy().into_owned());
            }
        }
        LabeledClipSet::new(clips, labels, ids, split, classes.len())
    };
    let train = load(Split::Train)?;
    let test = load(Split::Test)?;
    train.require_non_empty()?;
    check_disjoint(&train, &test)?;
    Ok((train, test, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videoio::write_clip;

    #[test]
    fn validation_errors() {
        let clip = Tensor::zeros(&[3, 2, 4, 4]);
        assert!(matches!(
            LabeledClipSet::new(vec![clip.clone()], vec![4], vec!["a".into()], Split::Train, 4),
            Err(ReplearnError::LabelOutOfRange { label: 4, classes: 4 })
        ));
        assert!(matches!(
            LabeledClipSet::new(vec![clip], vec![0], vec!["a".into()], Split::Train, 1),
            Err(ReplearnError::TooFewClasses(1))
        ));
        let empty = LabeledClipSet::new(vec![], vec![], vec![], Split::Test, 2).unwrap();
        assert!(matches!(empty.require_non_empty(), Err(ReplearnError::EmptySplit(_))));
    }

    #[test]
    fn loads_directory_layout() {
        let tmp = tempfile::tempdir().unwrap();
        for (split, class, n) in [("train", "jump", 2), ("train", "run", 1), ("test", "run", 1)] {
            let dir = tmp.path().join(split).join(class);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                write_clip(&dir.join(format!("{i}.tvclip")), &Tensor::full(&[3, 2, 4, 4], 0.5)).unwrap();
            }
        }
        let (train, test, classes) = load_labeled_dir(tmp.path()).unwrap();
        assert_eq!(classes, vec!["jump", "run"]);
        assert_eq!(train.labels, vec![0, 0, 1]);
        assert_eq!(test.labels, vec![1]);
        assert!(check_disjoint(&train, &test).is_ok());
        assert!(matches!(check_disjoint(&train, &train), Err(ReplearnError::OverlappingSplits(_))));
    }
}
