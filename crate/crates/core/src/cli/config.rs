use std::path::Path;

use serde::Deserialize;

use crate::nets::{Arch, NetConfig, Scale};
use crate::training::{RecNorm, TrainConfig};

use super::{CliError, TrainArgs};

/// Training fields as they may appear in a config file; every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub lambda_mask: Option<f64>,
    pub lambda_rec: Option<f64>,
    pub rec_norm: Option<RecNorm>,
    pub max_iterations: Option<u64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub scale: Option<String>,
    pub latent_dim: Option<usize>,
    pub frames: Option<usize>,
    pub size: Option<usize>,
    pub base_channels: Option<usize>,
}

/// Config file layout: top-level `seed` and `arch`, plus `[train]` and
/// `[net]` tables.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub arch: Option<String>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub net: NetSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }
}

/// Train and net settings after applying defaults, then the file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub net: NetConfig,
    pub arch: Arch,
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

impl RunConfig {
    /// `seed_required` turns a missing seed into a usage error.
    pub fn resolve(args: &TrainArgs, file: &FileConfig, seed_required: bool) -> Result<Self, CliError> {
        let mut train = TrainConfig::default();
        let t = &file.train;
        let seed = args.seed.or(t.seed).or(file.seed);
        match seed {
            Some(s) => train.seed = s,
            None if seed_required => return Err(CliError::Usage("missing required flag --seed".into())),
            None => {}
        }
        if let Some(v) = pick(&args.batch_size, &t.batch_size) {
            train.batch_size = v;
        }
        if let Some(v) = pick(&args.lr, &t.lr) {
            train.lr = v;
        }
        if let Some(v) = pick(&args.beta1, &t.beta1) {
            train.beta1 = v;
        }
        if let Some(v) = pick(&args.lambda_mask, &t.lambda_mask) {
            train.lambda_mask = v;
        }
        if let Some(v) = pick(&args.lambda_rec, &t.lambda_rec) {
            train.lambda_rec = v;
        }
        if let Some(v) = pick(&args.rec_norm, &t.rec_norm) {
            train.rec_norm = v;
        }
        if let Some(v) = pick(&args.iters, &t.max_iterations) {
            train.max_iterations = v;
        }
        if let Some(v) = pick(&args.checkpoint_every, &t.checkpoint_every) {
            train.checkpoint_every = v;
        }
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let n = &file.net;
        let scale = match pick(&args.scale, &n.scale) {
            Some(s) => Scale::parse(&s).ok_or_else(|| CliError::Usage(format!("unknown scale {s:?}")))?,
            None => Scale::Full,
        };
        let mut net = NetConfig::at_scale(scale);
        if let Some(v) = pick(&args.latent_dim, &n.latent_dim) {
            net.latent_dim = v;
        }
        if let Some(v) = pick(&args.frames, &n.frames) {
            net.frames = v;
        }
        if let Some(v) = pick(&args.size, &n.size) {
            net.size = v;
        }
        if let Some(v) = pick(&args.base_channels, &n.base_channels) {
            net.base_channels = v;
        }
        net.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let arch = match pick(&args.arch, &file.arch) {
            Some(a) => Arch::parse(&a).ok_or_else(|| CliError::Usage(format!("unknown arch {a:?}")))?,
            None => Arch::TwoStream,
        };
        Ok(Self { train, net, arch })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = FileConfig::parse("seed = 3\narch = \"one-stream\"\n[train]\nlr = 0.001\nbatch_size = 8\n[net]\nscale = \"quarter\"\n").unwrap();
        let args = TrainArgs {
            batch_size: Some(4),
            ..Default::default()
        };
        let r = RunConfig::resolve(&args, &file, true).unwrap();
        assert_eq!(r.train.seed, 3);
        assert_eq!(r.train.lr, 0.001);
        assert_eq!(r.train.batch_size, 4);
        assert_eq!(r.train.beta1, 0.5);
        assert_eq!(r.net, NetConfig::at_scale(Scale::Quarter));
        assert_eq!(r.arch, Arch::OneStream);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("sed = 1").is_err());
        assert!(FileConfig::parse("[train]\nlearning_rate = 0.1").is_err());
        assert!(FileConfig::parse("[net]\nwidth = 3").is_err());
    }

    #[test]
    fn seed_is_mandatory_when_asked() {
        let err = RunConfig::resolve(&TrainArgs::default(), &FileConfig::default(), true).unwrap_err();
        assert!(err.to_string().contains("--seed"));
        assert!(RunConfig::resolve(&TrainArgs::default(), &FileConfig::default(), false).is_ok());
    }
}
