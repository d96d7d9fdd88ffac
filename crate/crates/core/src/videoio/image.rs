use std::path::Path;

/// Planar float image, `channels` planes of `height * width` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut img = Self::new(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        img
    }

    /// Interleaved RGB bytes to planar floats in `[0, 255]`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Self {
        Self::from_fn(width, height, 3, |c, y, x| rgb[(y * width + x) * 3 + c] as f32)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let img = image::open(path)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?
            .to_rgb8();
        Ok(Self::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw()))
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.width * self.height..][..self.width * self.height]
    }

    /// Channel mean, or the single plane of a one-channel image.
    pub fn gray(&self) -> Image {
        let n = self.width * self.height;
        let mut g = Image::new(self.width, self.height, 1);
        for c in 0..self.channels {
            for (d, s) in g.data.iter_mut().zip(&self.data[c * n..][..n]) {
                *d += s / self.channels as f32;
            }
        }
        g
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear sample at `(x, y)` with edge clamping.
    pub fn bilinear(&self, c: usize, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        if fx == 0.0 && fy == 0.0 {
            return self.at(c, y0, x0);
        }
        let top = self.at(c, y0, x0) as f64 * (1.0 - fx) + self.at(c, y0, x1) as f64 * fx;
        let bot = self.at(c, y1, x0) as f64 * (1.0 - fx) + self.at(c, y1, x1) as f64 * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    }

    /// Separable Gaussian blur with edge clamping.
    pub fn blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = kernel.iter().sum();
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = Image::new(self.width, self.height, self.channels);
        let mut out = Image::new(self.width, self.height, self.channels);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, kv) in kernel.iter().enumerate() {
                        let sx = (x + k as isize - radius).clamp(0, w - 1);
                        acc += kv * self.at(c, y as usize, sx as usize) as f64;
                    }
                    tmp.data[((c * self.height) + y as usize) * self.width + x as usize] = (acc / norm) as f32;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, kv) in kernel.iter().enumerate() {
                        let sy = (y + k as isize - radius).clamp(0, h - 1);
                        acc += kv * tmp.at(c, sy as usize, x as usize) as f64;
                    }
                    out.data[((c * self.height) + y as usize) * self.width + x as usize] = (acc / norm) as f32;
                }
            }
        }
        out
    }

    /// Every other pixel in each direction.
    pub fn downsample(&self) -> Image {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        Image::from_fn(w, h, self.channels, |c, y, x| self.at(c, 2 * y, 2 * x))
    }
}
