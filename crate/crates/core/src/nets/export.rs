//! Clip export as per-frame binary PPM images plus a JSON manifest, and as
//! looping GIF animations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const FRAME_RATE: u32 = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub fps: u32,
    pub frames: Vec<String>,
    pub width: usize,
    pub height: usize,
}

/// `[-1, 1] -> [0, 255]` with round-half-up, clamped.
pub fn to_u8(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn clip_dims(clip: &Tensor) -> std::io::Result<[usize; 4]> {
    match clip.shape() {
        &[3, t, h, w] => Ok([3, t, h, w]),
        s => Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("expected a (3, T, H, W) clip, got {s:?}"),
        )),
    }
}

/// Interleaved RGB bytes of frame `t`.
pub fn frame_rgb(clip: &Tensor, t: usize) -> Vec<u8> {
    let s = clip.shape();
    let (frames, plane) = (s[1], s[2] * s[3]);
    let d = clip.data();
    let mut out = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_u8(d[(c * frames + t) * plane + i]));
        }
    }
    out
}

/// Writes `frame_0000.ppm ...` and `manifest.json` into `dir`.
pub fn export_ppm(clip: &Tensor, dir: &Path) -> std::io::Result<ExportManifest> {
    let [_, t, h, w] = clip_dims(clip)?;
    fs::create_dir_all(dir)?;
    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let name = format!("frame_{i:04}.ppm");
        let mut f = BufWriter::new(fs::File::create(dir.join(&name))?);
        write!(f, "P6\n{w} {h}\n255\n")?;
        f.write_all(&frame_rgb(clip, i))?;
        f.flush()?;
        frames.push(name);
    }
    let manifest = ExportManifest {
        fps: FRAME_RATE,
        frames,
        width: w,
        height: h,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads one binary PPM frame into interleaved RGB bytes.
pub fn read_ppm(path: &Path) -> std::io::Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?
        .to_rgb8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

/// Looping GIF of `clip`, each pixel repeated `upscale` times per axis.
pub fn encode_gif(clip: &Tensor, upscale: usize) -> std::io::Result<Vec<u8>> {
    let [_, t, h, w] = clip_dims(clip)?;
    let k = upscale.max(1);
    let (gw, gh) = (w * k, h * k);
    let to_io = |e: gif::EncodingError| std::io::Error::other(e);
    let mut out = Vec::new();
    {
        let mut enc = gif::Encoder::new(&mut out, gw as u16, gh as u16, &[]).map_err(to_io)?;
        enc.set_repeat(gif::Repeat::Infinite).map_err(to_io)?;
        for i in 0..t {
            let rgb = frame_rgb(clip, i);
            let mut big = Vec::with_capacity(gw * gh * 3);
            for y in 0..gh {
                for x in 0..gw {
                    let p = ((y / k) * w + x / k) * 3;
                    big.extend_from_slice(&rgb[p..p + 3]);
                }
            }
            let mut frame = gif::Frame::from_rgb_speed(gw as u16, gh as u16, &big, 10);
            frame.delay = (100 / FRAME_RATE) as u16;
            enc.write_frame(&frame).map_err(to_io)?;
        }
    }
    Ok(out)
}
