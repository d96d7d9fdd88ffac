//! Synthetic clip generators: a sprite sliding horizontally across a fixed
//! background inside a known band of rows, and a four-way motion-direction
//! task built from the same world.

use std::ops::Range;

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Motion-direction classes of the action task.
pub const ACTION_CLASSES: [&str; 4] = ["up", "down", "left", "right"];

const SPRITE_COLOR: [f32; 3] = [1.0, 0.6, -0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpriteWorld {
    pub frames: usize,
    pub size: usize,
    pub sprite: usize,
}

impl SpriteWorld {
    pub fn new(frames: usize, size: usize) -> Self {
        Self {
            frames,
            size,
            sprite: (size / 4).max(2),
        }
    }

    /// Static background `(3, S, S)` shared by every clip.
    pub fn background(&self) -> Tensor {
        let s = self.size as f32;
        Tensor::from_fn(&[3, self.size, self.size], |i| {
            let c = i / (self.size * self.size);
            let y = (i / self.size) % self.size;
            let x = i % self.size;
            let u = std::f32::consts::TAU * (x as f32 / s + c as f32 / 3.0);
            let v = std::f32::consts::TAU * (y as f32 / s);
            0.35 * u.sin() * v.cos() - 0.2
        })
    }

    /// Rows the horizontally moving sprite can occupy.
    pub fn band(&self) -> Range<usize> {
        let top = (self.size - self.sprite) / 2;
        top..top + self.sprite
    }

    /// `S * S` flags marking the sprite band.
    pub fn trajectory_mask(&self) -> Vec<bool> {
        let band = self.band();
        (0..self.size * self.size)
            .map(|i| band.contains(&(i / self.size)))
            .collect()
    }

    fn render(&self, positions: &[(usize, usize)]) -> Tensor {
        let (t, s) = (self.frames, self.size);
        let bg = self.background();
        let mut clip = Tensor::zeros(&[3, t, s, s]);
        let d = clip.data_mut();
        for (f, &(py, px)) in positions.iter().enumerate() {
            for c in 0..3 {
                let dst = &mut d[(c * t + f) * s * s..][..s * s];
                dst.copy_from_slice(&bg.data()[c * s * s..][..s * s]);
                for y in py..py + self.sprite {
                    for x in px..px + self.sprite {
                        dst[y * s + x] = SPRITE_COLOR[c];
                    }
                }
            }
        }
        clip
    }

    /// One clip `(3, T, S, S)`: the sprite bounces left and right inside the band.
    pub fn moving_clip(&self, rng: &mut Rng) -> Tensor {
        let span = self.size - self.sprite;
        let step = (self.size / 16).max(1) as isize;
        let mut x = rng.below(span + 1) as isize;
        let mut v = if rng.bernoulli(0.5) { step } else { -step } * (1 + rng.below(2) as isize);
        let y = self.band().start;
        let mut pos = Vec::with_capacity(self.frames);
        for _ in 0..self.frames {
            pos.push((y, x as usize));
            let next = x + v;
            if next < 0 || next > span as isize {
                v = -v;
            }
            x = (x + v).clamp(0, span as isize);
        }
        self.render(&pos)
    }

    pub fn moving_dataset(&self, n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| self.moving_clip(&mut rng)).collect()
    }

    /// Pixels per frame in the action task.
    pub fn action_speed(&self) -> usize {
        ((self.size - self.sprite) / self.frames).max(1)
    }

    /// A clip whose sprite moves straight in direction `class`
    /// (0 up, 1 down, 2 left, 3 right) from a random start.
    pub fn action_clip(&self, class: usize, rng: &mut Rng) -> Tensor {
        let span = self.size - self.sprite;
        let v = self.action_speed();
        let travel = v * (self.frames - 1);
        let free = span.saturating_sub(travel);
        let along = rng.below(free + 1);
        let across = rng.below(span + 1);
        let pos = (0..self.frames)
            .map(|f| {
                let d = f * v;
                match class {
                    0 => (along + travel - d, across),
                    1 => (along + d, across),
                    2 => (across, along + travel - d),
                    _ => (across, along + d),
                }
            })
            .collect::<Vec<_>>();
        self.render(&pos)
    }

    /// `per_class` clips of each direction, interleaved by class.
    pub fn action_dataset(&self, per_class: usize, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut clips = Vec::with_capacity(per_class * 4);
        let mut labels = Vec::with_capacity(per_class * 4);
        for _ in 0..per_class {
            for class in 0..4 {
                clips.push(self.action_clip(class, &mut rng));
                labels.push(class);
            }
        }
        (clips, labels)
    }
}

/// `batch` clips drawn uniformly with replacement, stacked to `(B, 3, T, H, W)`.
pub fn sample_batch(clips: &[Tensor], batch: usize, rng: &mut Rng) -> Tensor {
    let picked: Vec<Tensor> = (0..batch).map(|_| clips[rng.below(clips.len())].clone()).collect();
    Tensor::stack(&picked).expect("clips share a shape")
}

/// Per-pixel variance over time, averaged over channels and clips. Accepts
/// `(3, T, H, W)` clips or `(N, 3, T, H, W)` batches; returns `H * W` values.
pub fn temporal_variance_map(clips: &[Tensor]) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for clip in clips {
        let s = clip.shape();
        let (t, plane) = (s[s.len() - 3], s[s.len() - 2] * s[s.len() - 1]);
        if acc.is_empty() {
            acc = vec![0.0; plane];
        }
        for series in clip.data().chunks(t * plane) {
            for (i, a) in acc.iter_mut().enumerate() {
                let vals = (0..t).map(|f| series[f * plane + i] as f64);
                let mean = vals.clone().sum::<f64>() / t as f64;
                *a += vals.map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            }
            count += 1;
        }
    }
    acc.iter_mut().for_each(|a| *a /= count.max(1) as f64);
    acc
}

/// Mean of `map` over pixels where `mask` is `inside`.
pub fn masked_mean(map: &[f64], mask: &[bool], inside: bool) -> f64 {
    let (sum, n) = map
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == inside)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    sum / n.max(1) as f64
}
