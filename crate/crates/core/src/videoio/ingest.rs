//! Manifest-driven ingestion: frame directories to stabilized, normalized
//! clip files, one output subdirectory per source video.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container::write_clip;
use super::image::Image;
use super::segment::to_clip;
use super::stabilize::{stabilize, StabilizeConfig};
use super::VideoError;

pub const FRAME_EXTENSIONS: [&str; 5] = ["png", "ppm", "pnm", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub frame_dir: PathBuf,
    pub fps: f64,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub frames: usize,
    pub size: usize,
    pub fps: f64,
    /// Keep videos carrying any of these tags; empty keeps everything.
    pub tags: Vec<String>,
    pub stabilize: StabilizeConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            size: 64,
            fps: 25.0,
            tags: Vec::new(),
            stabilize: StabilizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VideoReport {
    pub id: String,
    pub clips: Vec<PathBuf>,
    pub dropped_segments: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub videos: Vec<VideoReport>,
    pub filtered: Vec<String>,
}

impl IngestReport {
    pub fn clip_count(&self) -> usize {
        self.videos.iter().map(|v| v.clips.len()).sum()
    }

    pub fn dropped_segments(&self) -> usize {
        self.videos.iter().map(|v| v.dropped_segments).sum()
    }
}

/// Parses JSON lines; relative frame directories resolve against `base`.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, VideoError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| VideoError::Manifest(format!("line {}: {e}", n + 1)))?;
        if e.id.is_empty() || e.id.contains(['/', '\\']) || e.id == "." || e.id == ".." {
            return Err(VideoError::Manifest(format!("line {}: bad id {:?}", n + 1, e.id)));
        }
        if !(e.fps > 0.0) {
            return Err(VideoError::Manifest(format!("line {}: fps must be positive", n + 1)));
        }
        if e.frame_dir.is_relative() {
            e.frame_dir = base.join(&e.frame_dir);
        }
        out.push(e);
    }
    Ok(out)
}

/// Frame files in name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, VideoError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Source frame indices sampled at `target` fps.
pub fn resample_indices(n: usize, source: f64, target: f64) -> Vec<usize> {
    if (source - target).abs() < 1e-9 {
        return (0..n).collect();
    }
    let duration = n as f64 / source;
    (0..(duration * target).floor() as usize)
        .map(|i| ((i as f64 * source / target).round() as usize).min(n - 1))
        .collect()
}

fn ingest_video(e: &ManifestEntry, out: &Path, cfg: &IngestConfig) -> Result<VideoReport, VideoError> {
    let files = list_frames(&e.frame_dir)?;
    let picked = resample_indices(files.len(), e.fps, cfg.fps);
    let dir = out.join(&e.id);
    std::fs::create_dir_all(&dir)?;
    let mut report = VideoReport {
        id: e.id.clone(),
        ..Default::default()
    };
    for window in picked.chunks_exact(cfg.frames) {
        let frames = window
            .iter()
            .map(|&i| Image::load(&files[i]))
            .collect::<std::io::Result<Vec<_>>>()?;
        let frames = if frames.len() >= 2 {
            let s = stabilize(&frames, &cfg.stabilize)?;
            if s.dropped {
                report.dropped_segments += 1;
                continue;
            }
            s.frames
        } else {
            frames
        };
        let path = dir.join(format!("clip_{:04}.tvclip", report.clips.len()));
        write_clip(&path, &to_clip(&frames, cfg.size))?;
        report.clips.push(path);
    }
    Ok(report)
}

/// Processes every manifest entry that passes the tag filter, in parallel.
/// Per-video failures are reported rather than aborting the run.
pub fn ingest(manifest: &[ManifestEntry], out: &Path, cfg: &IngestConfig) -> Result<IngestReport, VideoError> {
    if cfg.frames == 0 || cfg.size == 0 {
        return Err(VideoError::Manifest("frames and size must be positive".into()));
    }
    std::fs::create_dir_all(out)?;
    let (keep, filtered): (Vec<_>, Vec<_>) = manifest
        .iter()
        .partition(|e| cfg.tags.is_empty() || e.tags.iter().any(|t| cfg.tags.contains(t)));
    let videos = keep
        .par_iter()
        .map(|e| {
            ingest_video(e, out, cfg).unwrap_or_else(|err| VideoReport {
                id: e.id.clone(),
                error: Some(err.to_string()),
                ..Default::default()
            })
        })
        .collect();
    Ok(IngestReport {
        videos,
        filtered: filtered.into_iter().map(|e| e.id.clone()).collect(),
    })
}
