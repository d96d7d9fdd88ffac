//! `TVGAN001` checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "TVGAN001"
//! body_len u64
//! body     sections, each: name_len u32 | name utf-8 | payload_len u64 | payload
//! crc32    u32      over body
//! ```
//!
//! Sections: `meta` (JSON), `param/<net>/<name>` and `running/<net>/<name>`
//! tensors, `adam/<net>` (JSON hyperparameters and step count), and
//! `adam-m/<net>/<name>`, `adam-v/<net>/<name>` moment arrays.
//! A tensor payload is `ndim u32 | dims u64 * ndim | f32 data`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Arch, NetConfig, NetParams};
use crate::tensor::{AdamState, RunningStats, Tensor};

pub const MAGIC: &[u8; 8] = b"TVGAN001";
const FAMILY: &[u8; 5] = b"TVGAN";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version `{0}`")]
    VersionMismatch(String),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: NetConfig,
    pub arch: Option<Arch>,
    pub seed: u64,
    pub iteration: u64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub meta: CheckpointMeta,
    pub nets: BTreeMap<String, NetParams>,
    pub optimizers: BTreeMap<String, AdamState>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step_count: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

fn section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn floats(out: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn tensor_payload(t: &Tensor) -> Vec<u8> {
    let mut p = Vec::with_capacity(4 + 8 * t.ndim() + 4 * t.len());
    p.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        p.extend_from_slice(&(d as u64).to_le_bytes());
    }
    floats(&mut p, t.data());
    p
}

fn vec_payload(data: &[f32]) -> Vec<u8> {
    let mut p = Vec::with_capacity(8 + 4 * data.len());
    p.extend_from_slice(&(data.len() as u64).to_le_bytes());
    floats(&mut p, data);
    p
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        section(&mut body, "meta", &serde_json::to_vec(&self.meta).expect("meta serializes"));
        for (net, params) in &self.nets {
            for (name, t) in &params.params {
                section(&mut body, &format!("param/{net}/{name}"), &tensor_payload(t));
            }
            for (name, rs) in &params.running {
                let mut p = vec_payload(&rs.mean);
                floats(&mut p, &rs.var);
                section(&mut body, &format!("running/{net}/{name}"), &p);
            }
        }
        for (net, st) in &self.optimizers {
            let meta = AdamMeta {
                step_count: st.step_count,
                lr: st.lr,
                beta1: st.beta1,
                beta2: st.beta2,
                epsilon: st.epsilon,
            };
            section(&mut body, &format!("adam/{net}"), &serde_json::to_vec(&meta).expect("serializes"));
            for (name, m) in &st.m {
                section(&mut body, &format!("adam-m/{net}/{name}"), &vec_payload(m));
            }
            for (name, v) in &st.v {
                section(&mut body, &format!("adam-v/{net}/{name}"), &vec_payload(v));
            }
        }
        let mut out = Vec::with_capacity(body.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            if MAGIC.starts_with(bytes) {
                return Err(CheckpointError::Truncated("header".into()));
            }
            return Err(CheckpointError::BadMagic);
        }
        if &bytes[..8] != MAGIC {
            if &bytes[..5] == FAMILY {
                return Err(CheckpointError::VersionMismatch(
                    String::from_utf8_lossy(&bytes[5..8]).into_owned(),
                ));
            }
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader::new(&bytes[8..]);
        let body_len = r.u64("body length")? as usize;
        let body = r.take(body_len, "body")?;
        let crc = u32::from_le_bytes(r.take(4, "checksum")?.try_into().unwrap());
        if r.remaining() != 0 {
            return Err(CheckpointError::Corrupt("trailing bytes after checksum".into()));
        }
        if crc32fast::hash(body) != crc {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }
        parse_body(body)
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn net(&self, name: &str) -> Result<&NetParams> {
        self.nets
            .get(name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("no network `{name}` in checkpoint")))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated(what.into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn vec(&mut self, what: &str) -> Result<Vec<f32>> {
        let n = self.u64(what)? as usize;
        self.floats(n, what)
    }
}

fn corrupt(what: &str) -> CheckpointError {
    CheckpointError::Corrupt(format!("malformed section `{what}`"))
}

fn split2(rest: &str) -> Result<(&str, &str)> {
    rest.split_once('/').ok_or_else(|| corrupt(rest))
}

fn parse_body(body: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = Reader::new(body);
    let mut meta = None;
    let mut nets: BTreeMap<String, NetParams> = BTreeMap::new();
    let mut optimizers: BTreeMap<String, AdamState> = BTreeMap::new();
    while r.remaining() > 0 {
        let name_len = r.u32("section name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "section name")?)
            .map_err(|_| CheckpointError::Corrupt("section name is not utf-8".into()))?
            .to_string();
        let len = r.u64("section length")? as usize;
        let payload = r.take(len, &name)?;
        let mut p = Reader::new(payload);
        let (kind, rest) = name.split_once('/').unwrap_or((name.as_str(), ""));
        match kind {
            "meta" => {
                meta = Some(serde_json::from_slice(payload).map_err(|e| {
                    CheckpointError::Corrupt(format!("meta: {e}"))
                })?)
            }
            "param" => {
                let (net, pname) = split2(rest)?;
                let ndim = p.u32(&name)? as usize;
                let shape = (0..ndim)
                    .map(|_| p.u64(&name).map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt(&name))?;
                let data = p.floats(count, &name)?;
                let t = Tensor::new(shape, data).map_err(|_| corrupt(&name))?;
                nets.entry(net.into()).or_default().params.insert(pname.into(), t);
            }
            "running" => {
                let (net, rname) = split2(rest)?;
                let mean = p.vec(&name)?;
                let var = p.floats(mean.len(), &name)?;
                nets.entry(net.into())
                    .or_default()
                    .running
                    .insert(rname.into(), RunningStats { mean, var });
            }
            "adam" => {
                let m: AdamMeta = serde_json::from_slice(payload)
                    .map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
                let st = optimizers.entry(rest.into()).or_insert_with(|| AdamState::new(m.lr, m.beta1));
                st.step_count = m.step_count;
                st.lr = m.lr;
                st.beta1 = m.beta1;
                st.beta2 = m.beta2;
                st.epsilon = m.epsilon;
            }
            "adam-m" | "adam-v" => {
                let (net, pname) = split2(rest)?;
                let v = p.vec(&name)?;
                let st = optimizers.entry(net.into()).or_insert_with(|| AdamState::new(0.0, 0.0));
                if kind == "adam-m" {
                    st.m.insert(pname.into(), v);
                } else {
                    st.v.insert(pname.into(), v);
                }
            }
            _ => return Err(CheckpointError::Corrupt(format!("unknown section `{name}`"))),
        }
        if kind != "meta" && kind != "adam" && p.remaining() != 0 {
            return Err(corrupt(&name));
        }
    }
    Ok(ModelCheckpoint {
        meta: meta.ok_or_else(|| CheckpointError::Corrupt("missing meta section".into()))?,
        nets,
        optimizers,
    })
}
