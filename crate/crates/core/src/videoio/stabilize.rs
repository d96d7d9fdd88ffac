use super::image::Image;
use super::matching::match_keypoints;
use super::sift::detect_keypoints;
use super::transform::{estimate_transform_ransac, PointPair, RansacConfig, SimilarityTransform};
use super::VideoError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizeConfig {
    /// Segments whose adjacent-frame rms error exceeds this are dropped.
    pub rms_threshold: f64,
    pub ransac: RansacConfig,
    /// Divides samples before keypoint detection (255 for byte-range frames).
    pub value_scale: f32,
    /// Polish each adjacent transform by direct photometric alignment.
    pub refine: bool,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        Self {
            rms_threshold: 3.0,
            ransac: RansacConfig::default(),
            value_scale: 255.0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stabilized {
    /// Empty when dropped.
    pub frames: Vec<Image>,
    /// Frame `t` coordinates to reference (first frame) coordinates.
    pub transforms: Vec<SimilarityTransform>,
    /// Adjacent-frame rms reprojection errors.
    pub rms: Vec<f64>,
    pub dropped: bool,
}

/// Transform taking points of `cur` to points of `prev`, with the rms
/// reprojection error of its RANSAC inliers.
pub fn estimate_adjacent(prev: &Image, cur: &Image, cfg: &StabilizeConfig) -> Result<(SimilarityTransform, f64), VideoError> {
    let gray = |img: &Image| {
        let mut g = img.gray();
        g.data.iter_mut().for_each(|v| *v /= cfg.value_scale);
        g
    };
    let kp = detect_keypoints(&gray(prev))?;
    let kc = detect_keypoints(&gray(cur))?;
    let pairs: Vec<PointPair> = match_keypoints(&kc, &kp)
        .into_iter()
        .map(|(i, j)| ([kc[i].x, kc[i].y], [kp[j].x, kp[j].y]))
        .collect();
    let r = estimate_transform_ransac(&pairs, &cfg.ransac)?;
    let t = if cfg.refine {
        refine_direct(&gray(prev).blur(1.0), &gray(cur).blur(1.0), r.transform)
    } else {
        r.transform
    };
    Ok((t, r.rms))
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let acc: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - acc) / a[row][row];
    }
    Some(x)
}

/// Gauss-Newton on the photometric error `prev(W(x)) - cur(x)` over pixels
/// of `cur` whose image lands inside `prev`, starting from `init`. Returns
/// `init` unless the refinement lowers the error.
pub fn refine_direct(prev: &Image, cur: &Image, init: SimilarityTransform) -> SimilarityTransform {
    let (w, h) = (cur.width, cur.height);
    let grad = |img: &Image, dx: usize, dy: usize| {
        Image::from_fn(img.width, img.height, 1, |_, y, x| {
            let (x0, x1) = (x.saturating_sub(dx), (x + dx).min(img.width - 1));
            let (y0, y1) = (y.saturating_sub(dy), (y + dy).min(img.height - 1));
            (img.at(0, y1, x1) - img.at(0, y0, x0)) / ((x1 - x0) + (y1 - y0)).max(1) as f32
        })
    };
    let (gx, gy) = (grad(prev, 1, 0), grad(prev, 0, 1));
    let params = |t: &SimilarityTransform| [t.s * t.theta.cos(), t.s * t.theta.sin(), t.tx, t.ty];
    let from = |p: [f64; 4]| SimilarityTransform {
        theta: p[1].atan2(p[0]),
        s: p[0].hypot(p[1]),
        tx: p[2],
        ty: p[3],
    };
    // Clear of the smoothing's edge clamping in both frames.
    let margin = 5.0;
    let inner = |x: usize, y: usize| {
        let m = margin as usize;
        x >= m && y >= m && x + m < w && y + m < h
    };
    let cost = |t: &SimilarityTransform| {
        let (mut sum, mut n) = (0.0, 0usize);
        for y in 0..h {
            for x in (0..w).filter(|&x| inner(x, y)) {
                let [u, v] = t.apply([x as f64, y as f64]);
                if u < margin || v < margin || u > (prev.width - 1) as f64 - margin || v > (prev.height - 1) as f64 - margin {
                    continue;
                }
                sum += (prev.bilinear(0, u, v) as f64 - cur.at(0, y, x) as f64).powi(2);
                n += 1;
            }
        }
        if n * 8 < w * h { f64::INFINITY } else { sum / n as f64 }
    };
    let start = cost(&init);
    let mut p = params(&init);
    for _ in 0..30 {
        let t = from(p);
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for y in 0..h {
            for x in (0..w).filter(|&x| inner(x, y)) {
                let [u, v] = t.apply([x as f64, y as f64]);
                if u < margin || v < margin || u > (prev.width - 1) as f64 - margin || v > (prev.height - 1) as f64 - margin {
                    continue;
                }
                let r = prev.bilinear(0, u, v) as f64 - cur.at(0, y, x) as f64;
                let (ix, iy) = (gx.bilinear(0, u, v) as f64, gy.bilinear(0, u, v) as f64);
                let (xf, yf) = (x as f64, y as f64);
                let j = [ix * xf + iy * yf, -ix * yf + iy * xf, ix, iy];
                for a in 0..4 {
                    jtr[a] += j[a] * r;
                    for b in 0..4 {
                        jtj[a][b] += j[a] * j[b];
                    }
                }
            }
        }
        let Some(step) = solve4(jtj, jtr) else { break };
        for k in 0..4 {
            p[k] -= step[k];
        }
        if step[2].abs().max(step[3].abs()) < 1e-6 && step[0].abs().max(step[1].abs()) < 1e-8 {
            break;
        }
    }
    let refined = from(p);
    if cost(&refined) <= start { refined } else { init }
}

/// Aligns every frame to the first. Output pixels that map outside the
/// source frame take the previous stabilized frame's value.
pub fn stabilize(frames: &[Image], cfg: &StabilizeConfig) -> Result<Stabilized, VideoError> {
    if frames.len() < 2 {
        return Err(VideoError::TooFewFrames { needed: 2, got: frames.len() });
    }
    let mut out = Stabilized {
        frames: vec![frames[0].clone()],
        transforms: vec![SimilarityTransform::IDENTITY],
        rms: Vec::new(),
        dropped: false,
    };
    for t in 1..frames.len() {
        let (step, rms) = match estimate_adjacent(&frames[t - 1], &frames[t], cfg) {
            Ok(v) => v,
            Err(VideoError::TooFewMatches(_) | VideoError::EstimationFailed { .. }) => {
                return Ok(dropped(out));
            }
            Err(e) => return Err(e),
        };
        out.rms.push(rms);
        if rms > cfg.rms_threshold {
            return Ok(dropped(out));
        }
        let to_ref = out.transforms[t - 1].compose(&step);
        let from_ref = to_ref.inverse();
        let src = &frames[t];
        let prev = &out.frames[t - 1];
        let mut warped = Image::new(src.width, src.height, src.channels);
        for y in 0..src.height {
            for x in 0..src.width {
                let [sx, sy] = from_ref.apply([x as f64, y as f64]);
                let inside = src.contains(sx, sy);
                for c in 0..src.channels {
                    warped.data[(c * src.height + y) * src.width + x] =
                        if inside { src.bilinear(c, sx, sy) } else { prev.at(c, y, x) };
                }
            }
        }
        out.frames.push(warped);
        out.transforms.push(to_ref);
    }
    Ok(out)
}

fn dropped(mut s: Stabilized) -> Stabilized {
    s.frames.clear();
    s.dropped = true;
    s
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::datasets::temporal_variance_map;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    /// Textured RGB scene in `[0, 255]` viewed through a window offset by `(dx, dy)`.
    pub(crate) fn view(seed: u64, w: usize, h: usize, dx: f64, dy: f64) -> Image {
        let mut rng = Rng::new(seed);
        let blobs: Vec<[f64; 6]> = (0..240)
            .map(|_| {
                [
                    rng.uniform_range(-20.0, w as f64 + 20.0),
                    rng.uniform_range(-20.0, h as f64 + 20.0),
                    rng.uniform_range(0.8, 3.0),
                    rng.uniform_range(-0.4, 0.4),
                    rng.uniform_range(-0.4, 0.4),
                    rng.uniform_range(-0.4, 0.4),
                ]
            })
            .collect();
        Image::from_fn(w, h, 3, |c, y, x| {
            let (px, py) = (x as f64 + dx, y as f64 + dy);
            let v: f64 = blobs
                .iter()
                .map(|b| b[3 + c] * (-((px - b[0]).powi(2) + (py - b[1]).powi(2)) / (2.0 * b[2] * b[2])).exp())
                .sum();
            (255.0 * (0.5 + v).clamp(0.0, 1.0)) as f32
        })
    }

    pub(crate) fn variance(frames: &[Image]) -> f64 {
        let (w, h, c) = (frames[0].width, frames[0].height, frames[0].channels);
        let mut data = Vec::new();
        for ch in 0..c {
            for f in frames {
                data.extend_from_slice(f.plane(ch));
            }
        }
        let clip = Tensor::new(vec![c, frames.len(), h, w], data).unwrap();
        let map = temporal_variance_map(&[clip]);
        map.iter().sum::<f64>() / map.len() as f64
    }

    pub(crate) const JITTER: [(f64, f64); 6] = [(0.0, 0.0), (2.0, -1.0), (-1.5, 2.5), (3.0, 1.0), (-2.0, -2.0), (1.0, 3.0)];

    #[test]
    fn static_sequence_is_unchanged() {
        let f = view(1, 64, 48, 0.0, 0.0);
        let frames = vec![f.clone(); 4];
        let s = stabilize(&frames, &StabilizeConfig::default()).unwrap();
        assert!(!s.dropped);
        for out in &s.frames {
            assert!(out.data.iter().zip(&f.data).all(|(a, b)| (a - b).abs() <= 1e-6 * 255.0));
        }
    }

    #[test]
    fn jitter_is_removed() {
        let frames: Vec<Image> = JITTER.iter().map(|&(dx, dy)| view(2, 80, 64, dx, dy)).collect();
        let s = stabilize(&frames, &StabilizeConfig::default()).unwrap();
        assert!(!s.dropped);
        for (t, &(dx, dy)) in s.transforms.iter().zip(&JITTER) {
            assert!((t.tx - dx).abs() < 1e-2 && (t.ty - dy).abs() < 1e-2, "{t:?} vs {dx},{dy}");
            assert!(t.theta.abs() < 1e-2 && (t.s - 1.0).abs() < 1e-2);
        }
        let before = variance(&frames);
        let after = variance(&s.frames);
        assert!(after <= 0.1 * before, "{after} vs {before}");
    }

    #[test]
    fn garbage_frame_drops_segment() {
        let mut frames: Vec<Image> = (0..4).map(|_| view(3, 64, 48, 0.0, 0.0)).collect();
        let mut rng = Rng::new(5);
        frames[2] = Image {
            data: (0..64 * 48 * 3).map(|_| (rng.uniform() * 255.0) as f32).collect(),
            ..Image::new(64, 48, 3)
        };
        let s = stabilize(&frames, &StabilizeConfig::default()).unwrap();
        assert!(s.dropped);
        assert!(s.frames.is_empty());
    }

    #[test]
    fn single_frame_rejected() {
        let f = view(1, 64, 48, 0.0, 0.0);
        assert!(matches!(stabilize(&[f], &StabilizeConfig::default()), Err(VideoError::TooFewFrames { .. })));
    }
}
