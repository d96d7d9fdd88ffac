use super::sift::Keypoint;

pub const RATIO: f32 = 0.8;

fn dist2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row and the two smallest squared distances.
fn nearest<D: AsRef<[f32]>>(q: &[f32], set: &[D]) -> Option<(usize, f32, f32)> {
    let mut best = (usize::MAX, f32::INFINITY, f32::INFINITY);
    for (j, d) in set.iter().enumerate() {
        let v = dist2(q, d.as_ref());
        if v < best.1 {
            best = (j, v, best.1);
        } else if v < best.2 {
            best.2 = v;
        }
    }
    (best.0 != usize::MAX).then_some(best)
}

/// Mutual nearest neighbours whose nearest distance is below `0.8` of the
/// second nearest (distances, not squared).
pub fn match_descriptors<D: AsRef<[f32]>>(a: &[D], b: &[D]) -> Vec<(usize, usize)> {
    let back: Vec<usize> = b
        .iter()
        .map(|d| nearest(d.as_ref(), a).map_or(usize::MAX, |n| n.0))
        .collect();
    let mut out = Vec::new();
    for (i, d) in a.iter().enumerate() {
        let Some((j, d1, d2)) = nearest(d.as_ref(), b) else { continue };
        if back[j] == i && (d2.is_infinite() || d1 < RATIO * RATIO * d2) {
            out.push((i, j));
        }
    }
    out
}

pub fn match_keypoints(a: &[Keypoint], b: &[Keypoint]) -> Vec<(usize, usize)> {
    let da: Vec<&[f32]> = a.iter().map(|k| k.descriptor.as_slice()).collect();
    let db: Vec<&[f32]> = b.iter().map(|k| k.descriptor.as_slice()).collect();
    match_descriptors(&da, &db)
}
