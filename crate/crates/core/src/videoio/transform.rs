use serde::{Deserialize, Serialize};

use super::VideoError;
use crate::rng::Rng;

/// `p' = s R(theta) p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub theta: f64,
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

/// Source point and its destination.
pub type PointPair = ([f64; 2], [f64; 2]);

fn wrap(theta: f64) -> f64 {
    let t = theta.rem_euclid(std::f64::consts::TAU);
    if t > std::f64::consts::PI {
        t - std::f64::consts::TAU
    } else {
        t
    }
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        theta: 0.0,
        s: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { tx, ty, ..Self::IDENTITY }
    }

    pub fn apply(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let (a, b) = (self.s * self.theta.cos(), self.s * self.theta.sin());
        [a * x - b * y + self.tx, b * x + a * y + self.ty]
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &Self) -> Self {
        let [tx, ty] = self.apply([other.tx, other.ty]);
        Self {
            theta: wrap(self.theta + other.theta),
            s: self.s * other.s,
            tx,
            ty,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = Self {
            theta: wrap(-self.theta),
            s: 1.0 / self.s,
            tx: 0.0,
            ty: 0.0,
        };
        let [tx, ty] = r.apply([self.tx, self.ty]);
        Self { tx: -tx, ty: -ty, ..r }
    }

    pub fn residual(&self, (src, dst): &PointPair) -> f64 {
        let [x, y] = self.apply(*src);
        (x - dst[0]).hypot(y - dst[1])
    }
}

/// Least-squares similarity; exact for two distinct points. `None` when all
/// source points coincide.
pub fn fit_similarity(pairs: &[PointPair]) -> Option<SimilarityTransform> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&PointPair) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    let (mx, my) = (mean(&|p| p.0[0]), mean(&|p| p.0[1]));
    let (ux, uy) = (mean(&|p| p.1[0]), mean(&|p| p.1[1]));
    let (mut sa, mut sb, mut ss) = (0.0, 0.0, 0.0);
    for (p, q) in pairs {
        let (x, y) = (p[0] - mx, p[1] - my);
        let (u, v) = (q[0] - ux, q[1] - uy);
        sa += x * u + y * v;
        sb += x * v - y * u;
        ss += x * x + y * y;
    }
    if ss <= 1e-12 {
        return None;
    }
    let (a, b) = (sa / ss, sb / ss);
    let s = a.hypot(b);
    if s <= 1e-12 {
        return None;
    }
    Some(SimilarityTransform {
        theta: b.atan2(a),
        s,
        tx: ux - (a * mx - b * my),
        ty: uy - (b * mx + a * my),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_tol: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_tol: 2.0,
            min_inliers: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: SimilarityTransform,
    pub inliers: Vec<bool>,
    /// Root mean squared residual over the inliers.
    pub rms: f64,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn consensus(t: &SimilarityTransform, pairs: &[PointPair], tol: f64) -> Vec<bool> {
    pairs.iter().map(|p| t.residual(p) <= tol).collect()
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

fn chosen(pairs: &[PointPair], mask: &[bool]) -> Vec<PointPair> {
    pairs.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect()
}

/// Two-point minimal samples, best consensus, then least-squares refits
/// that are kept only while they do not lose inliers.
pub fn estimate_transform_ransac(pairs: &[PointPair], cfg: &RansacConfig) -> Result<RansacResult, VideoError> {
    if pairs.len() < 2 {
        return Err(VideoError::TooFewMatches(pairs.len()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut best: Option<(SimilarityTransform, Vec<bool>)> = None;
    for _ in 0..cfg.iterations {
        let i = rng.below(pairs.len());
        let mut j = rng.below(pairs.len() - 1);
        if j >= i {
            j += 1;
        }
        let Some(t) = fit_similarity(&[pairs[i], pairs[j]]) else { continue };
        let mask = consensus(&t, pairs, cfg.inlier_tol);
        if best.as_ref().map_or(true, |(_, m)| count(&mask) > count(m)) {
            best = Some((t, mask));
        }
    }
    let Some((mut transform, mut mask)) = best else {
        return Err(VideoError::EstimationFailed { inliers: 0 });
    };
    if count(&mask) < cfg.min_inliers {
        return Err(VideoError::EstimationFailed { inliers: count(&mask) });
    }
    for _ in 0..20 {
        let Some(refit) = fit_similarity(&chosen(pairs, &mask)) else { break };
        let grown = consensus(&refit, pairs, cfg.inlier_tol);
        if count(&grown) < count(&mask) {
            break;
        }
        let same = grown == mask;
        transform = refit;
        mask = grown;
        if same {
            break;
        }
    }
    let inl = chosen(pairs, &mask);
    let rms = (inl.iter().map(|p| transform.residual(p).powi(2)).sum::<f64>() / inl.len() as f64).sqrt();
    Ok(RansacResult {
        transform,
        inliers: mask,
        rms,
    })
}
