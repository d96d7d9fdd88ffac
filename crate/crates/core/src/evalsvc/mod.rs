//! Two-alternative forced-choice evaluation: randomized clip pairs, durable
//! judgments and preference tables.

mod aggregate;
mod server;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

pub use aggregate::{aggregate, AggregateFilter, Cell, PreferenceRow, PreferenceTable, SideBias};
pub use server::{router, serve, EvalServer, ServerConfig};
pub use store::{decode_line, encode_line, LoadStats, LogFile};

pub const SCHEMA_VERSION: u32 = 1;
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
/// Category of clips placed directly in a model directory.
pub const DEFAULT_CATEGORY: &str = "all";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 models with clips, have {0}")]
    NotEnoughModels(usize),
    #[error("unknown pair {0:?}")]
    UnknownPair(String),
    #[error("rater {rater:?} already answered pair {pair:?}")]
    Duplicate { pair: String, rater: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRef {
    /// `<model>/<category>/<file>` or `<model>/<file>`.
    pub id: String,
    pub model: String,
    pub category: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct ClipRegistry {
    models: BTreeMap<String, Vec<ClipRef>>,
    by_id: HashMap<String, usize>,
    flat: Vec<ClipRef>,
}

impl ClipRegistry {
    pub fn from_clips(clips: impl IntoIterator<Item = ClipRef>) -> Self {
        let mut reg = Self::default();
        for c in clips {
            if reg.by_id.contains_key(&c.id) {
                continue;
            }
            reg.by_id.insert(c.id.clone(), reg.flat.len());
            reg.models.entry(c.model.clone()).or_default().push(c.clone());
            reg.flat.push(c);
        }
        reg
    }

    /// Scans `<root>/<model>/[<category>/]*.gif`.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut clips = Vec::new();
        for model in sorted_entries(root)? {
            if !model.is_dir() {
                continue;
            }
            let name = file_name(&model);
            for entry in sorted_entries(&model)? {
                if entry.is_dir() {
                    let cat = file_name(&entry);
                    for f in sorted_entries(&entry)?.into_iter().filter(|p| is_gif(p)) {
                        clips.push(ClipRef {
                            id: format!("{name}/{cat}/{}", file_name(&f)),
                            model: name.clone(),
                            category: cat.clone(),
                            path: f,
                        });
                    }
                } else if is_gif(&entry) {
                    clips.push(ClipRef {
                        id: format!("{name}/{}", file_name(&entry)),
                        model: name.clone(),
                        category: DEFAULT_CATEGORY.into(),
                        path: entry,
                    });
                }
            }
        }
        Ok(Self::from_clips(clips))
    }

    pub fn models(&self) -> Vec<&str> {
        self.models.keys().map(String::as_str).collect()
    }

    pub fn clip(&self, id: &str) -> Option<&ClipRef> {
        self.by_id.get(id).map(|&i| &self.flat[i])
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

fn sorted_entries(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_gif(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("gif"))
}

/// An issued comparison, logged before it is handed out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedPair {
    pub pair_id: String,
    pub model_a: String,
    pub model_b: String,
    pub clip_a: String,
    pub clip_b: String,
    pub category: String,
    pub left_is_a: bool,
    pub rater_id: Option<String>,
    pub timestamp_ms: u64,
}

impl IssuedPair {
    pub fn left_clip(&self) -> &str {
        if self.left_is_a {
            &self.clip_a
        } else {
            &self.clip_b
        }
    }

    pub fn right_clip(&self) -> &str {
        if self.left_is_a {
            &self.clip_b
        } else {
            &self.clip_a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub pair_id: String,
    pub model_a: String,
    pub model_b: String,
    pub left_is_a: bool,
    pub choice: Side,
    pub rater_id: String,
    pub timestamp_ms: u64,
    pub category: String,
    pub clip_a: String,
    pub clip_b: String,
}

impl PreferenceRecord {
    pub fn winner(&self) -> &str {
        if (self.choice == Side::Left) == self.left_is_a {
            &self.model_a
        } else {
            &self.model_b
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Pair issuance and judgment recording over two append-only logs in `dir`.
#[derive(Debug)]
pub struct EvalService {
    registry: ClipRegistry,
    rng: Rng,
    pairs_log: LogFile<IssuedPair>,
    records_log: LogFile<PreferenceRecord>,
    pairs: HashMap<String, IssuedPair>,
    answered: HashSet<(String, String)>,
    records: Vec<PreferenceRecord>,
    issued: u64,
    load: [LoadStats; 2],
}

impl EvalService {
    /// Replays the logs in `dir`. Without a seed, draws are seeded from the
    /// clock.
    pub fn open(dir: &Path, registry: ClipRegistry, seed: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let (pairs_log, pair_rows, ps) = LogFile::<IssuedPair>::open(&dir.join(PAIRS_FILE))?;
        let (records_log, records, rs) = LogFile::<PreferenceRecord>::open(&dir.join(RECORDS_FILE))?;
        let issued = pair_rows.len() as u64;
        let pairs: HashMap<String, IssuedPair> = pair_rows.into_iter().map(|p| (p.pair_id.clone(), p)).collect();
        let answered = records.iter().map(|r| (r.pair_id.clone(), r.rater_id.clone())).collect();
        let base = seed.unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0));
        Ok(Self {
            registry,
            rng: Rng::new(base).derive(issued),
            pairs_log,
            records_log,
            pairs,
            answered,
            records,
            issued,
            load: [ps, rs],
        })
    }

    pub fn registry(&self) -> &ClipRegistry {
        &self.registry
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn pair(&self, id: &str) -> Option<&IssuedPair> {
        self.pairs.get(id)
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    /// Replay statistics for the pairs and records logs.
    pub fn load_stats(&self) -> [LoadStats; 2] {
        self.load
    }

    /// Uniform model pair, then a category both models cover (any clip of
    /// each if they share none), one clip from each, and a fair coin for
    /// sides.
    pub fn next_pair(&mut self, rater_id: Option<&str>) -> Result<IssuedPair> {
        let models: Vec<(&String, &Vec<ClipRef>)> = self.registry.models.iter().filter(|(_, c)| !c.is_empty()).collect();
        if models.len() < 2 {
            return Err(EvalError::NotEnoughModels(models.len()));
        }
        let i = self.rng.below(models.len());
        let mut j = self.rng.below(models.len() - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = if i < j { (models[i], models[j]) } else { (models[j], models[i]) };
        let cats_a: std::collections::BTreeSet<&str> = a.1.iter().map(|c| c.category.as_str()).collect();
        let shared: Vec<&str> = b
            .1
            .iter()
            .map(|c| c.category.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .intersection(&cats_a)
            .copied()
            .collect();
        let pick = |rng: &mut Rng, clips: &[ClipRef], cat: Option<&str>| -> ClipRef {
            let pool: Vec<&ClipRef> = clips.iter().filter(|c| cat.is_none_or(|k| c.category == k)).collect();
            pool[rng.below(pool.len())].clone()
        };
        let (clip_a, clip_b, category) = if shared.is_empty() {
            (pick(&mut self.rng, a.1, None), pick(&mut self.rng, b.1, None), "mixed".to_string())
        } else {
            let cat = shared[self.rng.below(shared.len())];
            (pick(&mut self.rng, a.1, Some(cat)), pick(&mut self.rng, b.1, Some(cat)), cat.to_string())
        };
        let left_is_a = self.rng.bernoulli(0.5);
        let pair = IssuedPair {
            pair_id: format!("p{:08}-{:016x}", self.issued, self.rng.next_u64()),
            model_a: a.0.clone(),
            model_b: b.0.clone(),
            clip_a: clip_a.id,
            clip_b: clip_b.id,
            category,
            left_is_a,
            rater_id: rater_id.map(str::to_string),
            timestamp_ms: now_ms(),
        };
        self.pairs_log.append(&pair)?;
        self.issued += 1;
        self.pairs.insert(pair.pair_id.clone(), pair.clone());
        Ok(pair)
    }

    /// Durably appends the judgment; acknowledged only after it is on disk.
    pub fn record_choice(&mut self, pair_id: &str, choice: Side, rater_id: &str) -> Result<PreferenceRecord> {
        if rater_id.is_empty() {
            return Err(EvalError::Invalid("empty rater_id".into()));
        }
        let pair = self.pairs.get(pair_id).ok_or_else(|| EvalError::UnknownPair(pair_id.into()))?;
        let key = (pair_id.to_string(), rater_id.to_string());
        if self.answered.contains(&key) {
            return Err(EvalError::Duplicate {
                pair: key.0,
                rater: key.1,
            });
        }
        let rec = PreferenceRecord {
            pair_id: pair_id.into(),
            model_a: pair.model_a.clone(),
            model_b: pair.model_b.clone(),
            left_is_a: pair.left_is_a,
            choice,
            rater_id: rater_id.into(),
            timestamp_ms: now_ms(),
            category: pair.category.clone(),
            clip_a: pair.clip_a.clone(),
            clip_b: pair.clip_b.clone(),
        };
        self.records_log.append(&rec)?;
        self.answered.insert(key);
        self.records.push(rec.clone());
        Ok(rec)
    }

    pub fn aggregate(&self, filter: &AggregateFilter) -> PreferenceTable {
        aggregate(&self.records, filter)
    }
}

/// Records loaded straight from a store directory.
pub fn load_records(dir: &Path) -> Result<Vec<PreferenceRecord>> {
    let (_, rows, _) = LogFile::<PreferenceRecord>::open(&dir.join(RECORDS_FILE))?;
    Ok(rows)
}
