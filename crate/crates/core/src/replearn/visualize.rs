use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nets::export::export_ppm;
use crate::nets::{Discriminator, LayerSpec};
use crate::tensor::{BatchNormMode, Tape, Tensor};

use super::{ReplearnError, Result};

/// Inclusive `(t, y, x)` ranges in input coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionBox {
    pub t: [usize; 2],
    pub y: [usize; 2],
    pub x: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEntry {
    pub clip: usize,
    pub activation: f64,
    pub region: RegionBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitActivationReport {
    pub layer: String,
    pub unit: usize,
    /// Descending by activation.
    pub entries: Vec<UnitEntry>,
    /// Every activation of the unit over the dataset is identical.
    pub degenerate: bool,
}

/// Input interval per axis `(t, y, x)` seen by position `pos` of trunk layer
/// `layer`, before clipping to the input bounds.
pub fn receptive_field(layers: &[LayerSpec], layer: usize, pos: [usize; 3]) -> [[isize; 2]; 3] {
    let mut r = pos.map(|p| [p as isize, p as isize]);
    for l in layers[..=layer].iter().rev() {
        for a in 0..3 {
            let (k, s, p) = (l.spec.kernel[a] as isize, l.spec.stride[a] as isize, l.spec.padding[a] as isize);
            r[a] = [r[a][0] * s - p, r[a][1] * s - p + k - 1];
        }
    }
    r
}

/// Ranks `clips` by the unit's peak response and, for the top `k`, maps the
/// region at or above half the peak back to input coordinates. When the peak
/// is not positive the region is the set of positions equal to it.
pub fn visualize_unit(net: &Discriminator, layer: usize, unit: usize, clips: &[Tensor], k: usize) -> Result<UnitActivationReport> {
    let layers = net.trunk_layers()?;
    let spec = layers
        .get(layer)
        .ok_or_else(|| ReplearnError::InvalidUnit(format!("layer {layer} of {}", layers.len())))?;
    if unit >= spec.spec.out_channels {
        return Err(ReplearnError::InvalidUnit(format!(
            "unit {unit} of {} in {}",
            spec.spec.out_channels, spec.name
        )));
    }
    let mut net = net.clone();
    let mut maps: Vec<(Vec<f32>, [usize; 3])> = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(16) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::stack(chunk)?);
        let (out, _) = net.forward(&tape, &x, BatchNormMode::Eval, false, None)?;
        let act = out.activations[layer].value();
        let s = act.shape();
        let (c, vol) = (s[1], s[2] * s[3] * s[4]);
        for n in 0..s[0] {
            let off = (n * c + unit) * vol;
            maps.push((act.data()[off..off + vol].to_vec(), [s[2], s[3], s[4]]));
        }
    }
    let (lo, hi) = maps
        .iter()
        .flat_map(|(m, _)| m.iter())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let degenerate = maps.is_empty() || lo == hi;
    let peak = |m: &[f32]| m.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by(|&a, &b| peak(&maps[b].0).total_cmp(&peak(&maps[a].0)).then(a.cmp(&b)));
    let entries = order
        .into_iter()
        .take(k)
        .map(|i| {
            let (m, [t, h, w]) = &maps[i];
            let top = peak(m);
            let hit = |v: f32| if top > 0.0 { v >= 0.5 * top } else { v == top };
            let input = clips[i].shape();
            let bounds = [input[1], input[2], input[3]];
            let mut boxx = [[isize::MAX, isize::MIN]; 3];
            for (j, &v) in m.iter().enumerate() {
                if !hit(v) {
                    continue;
                }
                let pos = [j / (h * w), (j / w) % h, j % w];
                debug_assert!(pos[0] < *t);
                let rf = receptive_field(&layers, layer, pos);
                for a in 0..3 {
                    boxx[a][0] = boxx[a][0].min(rf[a][0]);
                    boxx[a][1] = boxx[a][1].max(rf[a][1]);
                }
            }
            let clip_axis =
                |a: usize| [boxx[a][0].clamp(0, bounds[a] as isize - 1) as usize, boxx[a][1].clamp(0, bounds[a] as isize - 1) as usize];
            UnitEntry {
                clip: i,
                activation: top as f64,
                region: RegionBox {
                    t: clip_axis(0),
                    y: clip_axis(1),
                    x: clip_axis(2),
                },
            }
        })
        .collect();
    Ok(UnitActivationReport {
        layer: spec.name.clone(),
        unit,
        entries,
        degenerate,
    })
}

/// `report.json` plus, per entry, the cropped region as PPM frames under
/// `rank_XX/`.
pub fn write_report(report: &UnitActivationReport, clips: &[Tensor], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| ReplearnError::InvalidData(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json)?;
    for (rank, e) in report.entries.iter().enumerate() {
        let clip = &clips[e.clip];
        let s = clip.shape();
        let r = e.region;
        let (t, h, w) = (r.t[1] - r.t[0] + 1, r.y[1] - r.y[0] + 1, r.x[1] - r.x[0] + 1);
        let crop = Tensor::from_fn(&[3, t, h, w], |i| {
            let (c, f, y, x) = (i / (t * h * w), (i / (h * w)) % t, (i / w) % h, i % w);
            clip.data()[((c * s[1] + r.t[0] + f) * s[2] + r.y[0] + y) * s[3] + r.x[0] + x]
        });
        export_ppm(&crop, &dir.join(format!("rank_{rank:02}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{NetConfig, Scale};
    use crate::rng::Rng;

    fn quarter() -> Discriminator {
        Discriminator::new(NetConfig::at_scale(Scale::Quarter), &mut Rng::new(1)).unwrap()
    }

    fn set_layer(d: &mut Discriminator, prefix: &str, value: f32) {
        for (k, v) in d.net.params.iter_mut() {
            if k.starts_with(prefix) && k.ends_with(".w") {
                v.data_mut().iter_mut().for_each(|x| *x = value);
            }
            if k.starts_with(prefix) && k.ends_with(".b") {
                v.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    #[test]
    fn zero_unit_is_degenerate() {
        let mut d = quarter();
        set_layer(&mut d, "d.0", 0.0);
        let clips: Vec<Tensor> = (0..3).map(|i| Tensor::full(&[3, 8, 16, 16], i as f32 * 0.1)).collect();
        let r = visualize_unit(&d, 0, 2, &clips, 10).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.entries.len(), 3);
    }

    #[test]
    fn invalid_ids() {
        let d = quarter();
        let clips = vec![Tensor::zeros(&[3, 8, 16, 16])];
        assert!(matches!(visualize_unit(&d, 4, 0, &clips, 1), Err(ReplearnError::InvalidUnit(_))));
        assert!(matches!(visualize_unit(&d, 0, 999, &clips, 1), Err(ReplearnError::InvalidUnit(_))));
    }

    #[test]
    fn delta_lights_exactly_its_receptive_field() {
        let mut d = quarter();
        for l in ["d.0", "d.1", "d.2"] {
            set_layer(&mut d, l, 0.01);
        }
        let delta = [3usize, 9, 6];
        let mut clip = Tensor::zeros(&[3, 8, 16, 16]);
        clip.data_mut()[(delta[0] * 16 + delta[1]) * 16 + delta[2]] = 1.0;
        let tape = Tape::new();
        let x = tape.constant(Tensor::stack(&[clip]).unwrap());
        let (out, _) = d.forward(&tape, &x, BatchNormMode::Eval, false, None).unwrap();
        let layers = d.trunk_layers().unwrap();
        for layer in 0..3 {
            let act = out.activations[layer].value();
            let s = act.shape().to_vec();
            for t in 0..s[2] {
                for y in 0..s[3] {
                    for xx in 0..s[4] {
                        let v = act.data()[(t * s[3] + y) * s[4] + xx];
                        let rf = receptive_field(&layers, layer, [t, y, xx]);
                        let inside = (0..3).all(|a| rf[a][0] <= delta[a] as isize && delta[a] as isize <= rf[a][1]);
                        assert_eq!(v > 0.0, inside, "layer {layer} at {t},{y},{xx}");
                    }
                }
            }
        }
    }

    #[test]
    fn edge_unit_finds_the_stripe() {
        let mut d = quarter();
        // Unit 0 of the first layer responds to bright pixels.
        for (k, v) in d.net.params.iter_mut() {
            if k == "d.0.w" {
                let per = v.len() / v.shape()[0];
                v.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = if i < per { 1.0 } else { 0.0 });
            }
            if k == "d.0.b" {
                v.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let stripe = |col: usize| Tensor::from_fn(&[3, 8, 16, 16], |i| if i % 16 == col { 1.0 } else { -1.0 });
        let clips = vec![stripe(4), stripe(11)];
        let r = visualize_unit(&d, 0, 0, &clips, 5).unwrap();
        assert!(!r.degenerate);
        for e in &r.entries {
            let col = if e.clip == 0 { 4 } else { 11 };
            assert!(e.region.x[0] <= col && col <= e.region.x[1]);
            // The stripe plus at most one kernel width of slack on each side.
            assert!(e.region.x[1] - e.region.x[0] <= 1 + 2 * 3, "{:?}", e.region);
        }
        let tmp = tempfile::tempdir().unwrap();
        write_report(&r, &clips, tmp.path()).unwrap();
        assert!(tmp.path().join("report.json").exists());
        assert!(tmp.path().join("rank_00/manifest.json").exists());
    }
}
