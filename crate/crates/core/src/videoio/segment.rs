use super::image::Image;
use crate::tensor::Tensor;

/// Center square crop resized to `size x size` with bilinear sampling.
pub fn crop_resize(frame: &Image, size: usize) -> Image {
    let side = frame.width.min(frame.height) as f64;
    let (ox, oy) = ((frame.width as f64 - side) / 2.0, (frame.height as f64 - side) / 2.0);
    let scale = side / size as f64;
    Image::from_fn(size, size, frame.channels, |c, y, x| {
        let sx = ox + (x as f64 + 0.5) * scale - 0.5;
        let sy = oy + (y as f64 + 0.5) * scale - 0.5;
        frame.bilinear(c, sx, sy)
    })
}

/// `(3, T, S, S)` clip from byte-range frames, mapped by `v / 127.5 - 1`.
pub fn to_clip(frames: &[Image], size: usize) -> Tensor {
    let t = frames.len();
    let mut data = vec![0.0f32; 3 * t * size * size];
    for (f, frame) in frames.iter().enumerate() {
        let small = crop_resize(frame, size);
        for c in 0..3 {
            let src = small.plane(c.min(small.channels - 1));
            let dst = &mut data[(c * t + f) * size * size..][..size * size];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = ((*s as f64 / 127.5 - 1.0) as f32).clamp(-1.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, t, size, size], data).expect("sized buffer")
}

/// Non-overlapping `frames`-long windows; the remainder is discarded.
pub fn segment_and_normalize(video: &[Image], frames: usize, size: usize) -> Vec<Tensor> {
    video.chunks_exact(frames).map(|w| to_clip(w, size)).collect()
}
