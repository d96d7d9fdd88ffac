//! Simplified SIFT: difference-of-Gaussian extrema over a three-octave
//! pyramid with quadratic refinement, contrast and edge rejection, a 36-bin
//! orientation histogram, and a 4x4x8 gradient descriptor.
//!
//! Differences from the full algorithm: only three octaves are built,
//! thresholds are fixed, and descriptor samples use the nearest pyramid level.

use super::image::Image;
use super::VideoError;

pub const DESCRIPTOR_LEN: usize = 128;
pub const MIN_FRAME: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SiftConfig {
    pub octaves: usize,
    pub scales: usize,
    pub sigma: f64,
    /// DoG contrast threshold for images in `[0, 1]`, divided by `scales`.
    pub contrast: f64,
    pub edge_ratio: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales: 3,
            sigma: 1.6,
            contrast: 0.04,
            edge_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Subpixel position in input pixels.
    pub x: f64,
    pub y: f64,
    pub octave: usize,
    /// Blur scale in input pixels.
    pub scale: f64,
    /// Radians in `[0, 2 pi)`.
    pub orientation: f64,
    /// Unit-length descriptor.
    pub descriptor: Vec<f32>,
}

struct Octave {
    gauss: Vec<Image>,
    dog: Vec<Image>,
}

fn build_pyramid(gray: &Image, cfg: &SiftConfig) -> Vec<Octave> {
    let s = cfg.scales;
    let k = 2f64.powf(1.0 / s as f64);
    // Doubled input, assumed to carry blur 0.5 before doubling.
    let up = Image::from_fn(gray.width * 2, gray.height * 2, 1, |_, y, x| gray.bilinear(0, x as f64 / 2.0, y as f64 / 2.0));
    let mut base = up.blur((cfg.sigma * cfg.sigma - 1.0).sqrt());
    let mut octaves = Vec::new();
    for _ in 0..cfg.octaves {
        if base.width < 8 || base.height < 8 {
            break;
        }
        let mut gauss = vec![base.clone()];
        for i in 1..s + 3 {
            let prev = cfg.sigma * k.powi(i as i32 - 1);
            let inc = (prev * k).powi(2) - prev * prev;
            gauss.push(gauss[i - 1].blur(inc.sqrt()));
        }
        let dog = gauss
            .windows(2)
            .map(|w| Image {
                data: w[1].data.iter().zip(&w[0].data).map(|(a, b)| a - b).collect(),
                ..w[0].clone()
            })
            .collect();
        base = gauss[s].downsample();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[Image], i: usize, y: usize, x: usize) -> bool {
    let v = dog[i].at(0, y, x);
    let mut max = true;
    let mut min = true;
    for d in &dog[i - 1..=i + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(d, &dog[i]) && yy == y && xx == x {
                    continue;
                }
                let n = d.at(0, yy, xx);
                max &= v > n;
                min &= v < n;
            }
        }
    }
    max || min
}

/// Gradient and Hessian of the DoG stack at an integer sample.
fn derivatives(dog: &[Image], i: usize, y: usize, x: usize) -> ([f64; 3], [[f64; 3]; 3]) {
    let d = |s: usize, yy: usize, xx: usize| dog[s].at(0, yy, xx) as f64;
    let v = d(i, y, x);
    let g = [
        (d(i, y, x + 1) - d(i, y, x - 1)) / 2.0,
        (d(i, y + 1, x) - d(i, y - 1, x)) / 2.0,
        (d(i + 1, y, x) - d(i - 1, y, x)) / 2.0,
    ];
    let dxx = d(i, y, x + 1) + d(i, y, x - 1) - 2.0 * v;
    let dyy = d(i, y + 1, x) + d(i, y - 1, x) - 2.0 * v;
    let dss = d(i + 1, y, x) + d(i - 1, y, x) - 2.0 * v;
    let dxy = (d(i, y + 1, x + 1) - d(i, y + 1, x - 1) - d(i, y - 1, x + 1) + d(i, y - 1, x - 1)) / 4.0;
    let dxs = (d(i + 1, y, x + 1) - d(i + 1, y, x - 1) - d(i - 1, y, x + 1) + d(i - 1, y, x - 1)) / 4.0;
    let dys = (d(i + 1, y + 1, x) - d(i + 1, y - 1, x) - d(i - 1, y + 1, x) + d(i - 1, y - 1, x)) / 4.0;
    (g, [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *o = det(m) / d;
    }
    Some(out)
}

struct Refined {
    x: f64,
    y: f64,
    level: f64,
    xi: usize,
    yi: usize,
    li: usize,
}

fn refine(oct: &Octave, cfg: &SiftConfig, mut i: usize, mut y: usize, mut x: usize) -> Option<Refined> {
    let (w, h) = (oct.dog[0].width, oct.dog[0].height);
    let s = cfg.scales;
    for _ in 0..5 {
        let (g, hess) = derivatives(&oct.dog, i, y, x);
        let off = solve3(hess, [-g[0], -g[1], -g[2]])?;
        if off.iter().all(|o| o.abs() <= 0.5) {
            let value = oct.dog[i].at(0, y, x) as f64 + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            if value.abs() < cfg.contrast / s as f64 {
                return None;
            }
            let tr = hess[0][0] + hess[1][1];
            let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[0][1];
            let r = cfg.edge_ratio;
            if det <= 0.0 || tr * tr * r >= (r + 1.0).powi(2) * det {
                return None;
            }
            return Some(Refined {
                x: x as f64 + off[0],
                y: y as f64 + off[1],
                level: i as f64 + off[2],
                xi: x,
                yi: y,
                li: i,
            });
        }
        let step = |v: usize, o: f64| (v as f64 + o.round()) as isize;
        let (nx, ny, ni) = (step(x, off[0]), step(y, off[1]), step(i, off[2]));
        if nx < 1 || ny < 1 || nx >= w as isize - 1 || ny >= h as isize - 1 || ni < 1 || ni > s as isize {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        i = ni as usize;
    }
    None
}

fn gradient(img: &Image, y: usize, x: usize) -> (f64, f64) {
    let dx = img.at(0, y, x + 1) as f64 - img.at(0, y, x - 1) as f64;
    let dy = img.at(0, y + 1, x) as f64 - img.at(0, y - 1, x) as f64;
    ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
}

fn orientations(img: &Image, x: usize, y: usize, sigma: f64) -> Vec<f64> {
    const BINS: usize = 36;
    let mut hist = [0.0f64; BINS];
    let sw = 1.5 * sigma;
    let radius = (3.0 * sw).round() as isize;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy < 1 || xx < 1 || yy >= img.height as isize - 1 || xx >= img.width as isize - 1 {
                continue;
            }
            let (mag, ang) = gradient(img, yy as usize, xx as usize);
            let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sw * sw)).exp();
            let a = ang.rem_euclid(std::f64::consts::TAU);
            hist[((a / std::f64::consts::TAU * BINS as f64) as usize) % BINS] += wgt * mag;
        }
    }
    for _ in 0..2 {
        let prev = hist;
        for b in 0..BINS {
            hist[b] = (prev[(b + BINS - 1) % BINS] + 2.0 * prev[b] + prev[(b + 1) % BINS]) / 4.0;
        }
    }
    let max = hist.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for b in 0..BINS {
        let (l, c, r) = (hist[(b + BINS - 1) % BINS], hist[b], hist[(b + 1) % BINS]);
        if c > l && c > r && c >= 0.8 * max {
            let off = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = b as f64 + 0.5 + off;
            out.push((bin / BINS as f64 * std::f64::consts::TAU).rem_euclid(std::f64::consts::TAU));
        }
    }
    out
}

fn descriptor(img: &Image, x: f64, y: f64, sigma: f64, theta: f64) -> Option<Vec<f32>> {
    const D: usize = 4;
    const N: usize = 8;
    let cell = 3.0 * sigma;
    let radius = (cell * (D as f64 + 1.0) * std::f64::consts::SQRT_2 / 2.0).round() as isize;
    let (cos, sin) = (theta.cos(), theta.sin());
    let mut hist = vec![0.0f64; D * D * N];
    let (xc, yc) = (x.round() as isize, y.round() as isize);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (yy, xx) = (yc + dy, xc + dx);
            if yy < 1 || xx < 1 || yy >= img.height as isize - 1 || xx >= img.width as isize - 1 {
                continue;
            }
            let (px, py) = (xx as f64 - x, yy as f64 - y);
            // Rotate into the keypoint frame, in cell units centred on the grid.
            let rx = (cos * px + sin * py) / cell + D as f64 / 2.0 - 0.5;
            let ry = (-sin * px + cos * py) / cell + D as f64 / 2.0 - 0.5;
            if rx <= -1.0 || ry <= -1.0 || rx >= D as f64 || ry >= D as f64 {
                continue;
            }
            let (mag, ang) = gradient(img, yy as usize, xx as usize);
            let wgt = (-((rx - 1.5).powi(2) + (ry - 1.5).powi(2)) / 8.0).exp();
            let o = ((ang - theta).rem_euclid(std::f64::consts::TAU)) / std::f64::consts::TAU * N as f64;
            let (x0, y0, o0) = (rx.floor(), ry.floor(), o.floor());
            let (fx, fy, fo) = (rx - x0, ry - y0, o - o0);
            for (iy, wy) in [(y0 as isize, 1.0 - fy), (y0 as isize + 1, fy)] {
                if !(0..D as isize).contains(&iy) {
                    continue;
                }
                for (ix, wx) in [(x0 as isize, 1.0 - fx), (x0 as isize + 1, fx)] {
                    if !(0..D as isize).contains(&ix) {
                        continue;
                    }
                    for (io, wo) in [(o0 as usize % N, 1.0 - fo), ((o0 as usize + 1) % N, fo)] {
                        hist[(iy as usize * D + ix as usize) * N + io] += mag * wgt * wx * wy * wo;
                    }
                }
            }
        }
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return None;
    }
    hist.iter_mut().for_each(|v| *v = (*v / norm).min(0.2));
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some(hist.iter().map(|v| (v / norm) as f32).collect())
}

/// Keypoints of a single-channel image with values in `[0, 1]`.
pub fn detect_keypoints(gray: &Image) -> Result<Vec<Keypoint>, VideoError> {
    detect_with(gray, &SiftConfig::default())
}

pub fn detect_with(gray: &Image, cfg: &SiftConfig) -> Result<Vec<Keypoint>, VideoError> {
    if gray.width < MIN_FRAME || gray.height < MIN_FRAME {
        return Err(VideoError::FrameTooSmall {
            width: gray.width,
            height: gray.height,
            min: MIN_FRAME,
        });
    }
    let gray = if gray.channels == 1 { gray.clone() } else { gray.gray() };
    let s = cfg.scales;
    let mut out = Vec::new();
    for (o, oct) in build_pyramid(&gray, cfg).iter().enumerate() {
        let (w, h) = (oct.dog[0].width, oct.dog[0].height);
        let pre = 0.5 * cfg.contrast / s as f64;
        let scale = (1usize << o) as f64 / 2.0;
        for i in 1..=s {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if (oct.dog[i].at(0, y, x) as f64).abs() <= pre || !is_extremum(&oct.dog, i, y, x) {
                        continue;
                    }
                    let Some(r) = refine(oct, cfg, i, y, x) else { continue };
                    let sigma_oct = cfg.sigma * 2f64.powf(r.level / s as f64);
                    // Skip points whose blur support reaches the frame edge.
                    let margin = (3.0 * sigma_oct).ceil() + 1.0;
                    if r.x < margin || r.y < margin || r.x > (w - 1) as f64 - margin || r.y > (h - 1) as f64 - margin {
                        continue;
                    }
                    let img = &oct.gauss[r.li];
                    for theta in orientations(img, r.xi, r.yi, sigma_oct) {
                        if let Some(desc) = descriptor(img, r.x, r.y, sigma_oct, theta) {
                            out.push(Keypoint {
                                x: r.x * scale,
                                y: r.y * scale,
                                octave: o,
                                scale: sigma_oct * scale,
                                orientation: theta,
                                descriptor: desc,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
