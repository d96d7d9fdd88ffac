use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use vidgan::rng::Rng;
use vidgan::videoio::Image;
use vidgan_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let n = unsafe { vg_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n + 1];
    unsafe { vg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn cli(wd: &Path, args: &[&str]) {
    let mut argv = vec!["vidgan".to_string(), "--workdir".into(), wd.to_str().unwrap().into(), "--log".into(), "metrics.jsonl".into()];
    argv.extend(args.iter().map(|s| s.to_string()));
    assert_eq!(vidgan::cli::run(argv), 0, "{args:?}");
}

const SMALL: &[&str] = &["--scale", "quarter", "--synthetic", "8", "--batch-size", "4", "--seed", "3"];

fn load(path: &Path) -> *mut VgModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { vg_model_load(cstr(path).as_ptr(), &mut m) }, VG_OK, "{}", last_error());
    assert!(!m.is_null());
    m
}

#[test]
fn generation_matches_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let wd = tmp.path();
    let mut args = vec!["train-gan", "--iters", "2", "--out", "g.tvgan"];
    args.extend_from_slice(SMALL);
    cli(wd, &args);
    cli(wd, &["generate", "--checkpoint", "g.tvgan", "--count", "2", "--seed", "11", "--out", "clips"]);

    let m = load(&wd.join("g.tvgan"));
    let mut shape = [0usize; 4];
    assert_eq!(unsafe { vg_model_clip_shape(m, shape.as_mut_ptr()) }, VG_OK);
    assert_eq!(shape, [3, 8, 16, 16]);
    let per: usize = shape.iter().product();

    let mut small = vec![0f32; 2 * per - 1];
    assert_eq!(unsafe { vg_model_generate(m, 2, 11, small.as_mut_ptr(), small.len()) }, VG_ERR_BUFFER_TOO_SMALL);
    assert!(last_error().contains(&(2 * per).to_string()));
    assert_eq!(unsafe { vg_model_generate(m, 0, 11, small.as_mut_ptr(), small.len()) }, VG_ERR_INVALID_ARGUMENT);

    let mut out = vec![0f32; 2 * per];
    assert_eq!(unsafe { vg_model_generate(m, 2, 11, out.as_mut_ptr(), out.len()) }, VG_OK);
    for i in 0..2 {
        let written = vidgan::videoio::read_clip(&wd.join(format!("clips/clip_{i:04}.tvclip"))).unwrap();
        assert_eq!(written.data(), &out[i * per..(i + 1) * per]);
    }
    assert!(out.iter().all(|v| v.abs() <= 1.0));
    unsafe { vg_model_free(m) };
}

#[test]
fn future_checkpoints_cannot_generate() {
    let tmp = tempfile::tempdir().unwrap();
    let wd = tmp.path();
    let mut args = vec!["train-future", "--iters", "1", "--out", "f.tvgan"];
    args.extend_from_slice(SMALL);
    cli(wd, &args);
    let m = load(&wd.join("f.tvgan"));
    let mut out = vec![0f32; 3 * 8 * 16 * 16];
    assert_eq!(unsafe { vg_model_generate(m, 1, 0, out.as_mut_ptr(), out.len()) }, VG_ERR_UNSUPPORTED);
    unsafe { vg_model_free(m) };
}

#[test]
fn load_errors_are_classified() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let missing = cstr(&tmp.path().join("absent.tvgan"));
    assert_eq!(unsafe { vg_model_load(missing.as_ptr(), &mut m) }, VG_ERR_IO);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let junk = tmp.path().join("junk.tvgan");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    assert_eq!(unsafe { vg_model_load(cstr(&junk).as_ptr(), &mut m) }, VG_ERR_FORMAT);
    assert_eq!(unsafe { vg_clip_read(cstr(&junk).as_ptr(), &mut ptr::null_mut()) }, VG_ERR_FORMAT);
}

#[test]
fn clip_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let path = cstr(&tmp.path().join("c.tvclip"));
    let shape = [3usize, 2, 4, 5];
    let n: usize = shape.iter().product();
    let mut rng = Rng::new(4);
    let data: Vec<f32> = (0..n).map(|_| 2.0 * rng.uniform() as f32 - 1.0).collect();
    assert_eq!(unsafe { vg_clip_write(path.as_ptr(), data.as_ptr(), shape.as_ptr()) }, VG_OK, "{}", last_error());

    let mut clip = ptr::null_mut();
    assert_eq!(unsafe { vg_clip_read(path.as_ptr(), &mut clip) }, VG_OK);
    let mut got_shape = [0usize; 4];
    assert_eq!(unsafe { vg_clip_shape(clip, got_shape.as_mut_ptr()) }, VG_OK);
    assert_eq!(got_shape, shape);
    let mut got = vec![0f32; n];
    assert_eq!(unsafe { vg_clip_data(clip, got.as_mut_ptr(), n - 1) }, VG_ERR_BUFFER_TOO_SMALL);
    assert_eq!(unsafe { vg_clip_data(clip, got.as_mut_ptr(), n) }, VG_OK);
    assert_eq!(got, data);
    unsafe { vg_clip_free(clip) };

    let bad_shape = [3usize, 0, 4, 5];
    assert_eq!(unsafe { vg_clip_write(path.as_ptr(), data.as_ptr(), bad_shape.as_ptr()) }, VG_ERR_INVALID_ARGUMENT);
    let two_channels = [2usize, 3, 4, 5];
    assert_eq!(unsafe { vg_clip_write(path.as_ptr(), data.as_ptr(), two_channels.as_ptr()) }, VG_ERR_INVALID_ARGUMENT);
}

/// Smooth random blobs in `[0, 255]` viewed through a window offset by `(dx, dy)`.
fn scene(w: usize, h: usize, dx: f64, dy: f64) -> Image {
    let mut rng = Rng::new(17);
    let blobs: Vec<[f64; 4]> = (0..220)
        .map(|_| {
            [
                -20.0 + (w as f64 + 40.0) * rng.uniform(),
                -20.0 + (h as f64 + 40.0) * rng.uniform(),
                0.8 + 2.2 * rng.uniform(),
                0.8 * rng.uniform() - 0.4,
            ]
        })
        .collect();
    Image::from_fn(w, h, 1, |_, y, x| {
        let (px, py) = (x as f64 + dx, y as f64 + dy);
        let v: f64 = blobs
            .iter()
            .map(|b| b[3] * (-((px - b[0]).powi(2) + (py - b[1]).powi(2)) / (2.0 * b[2] * b[2])).exp())
            .sum();
        (255.0 * (0.5 + v).clamp(0.0, 1.0)) as f32
    })
}

#[test]
fn similarity_recovers_a_translation() {
    let (w, h) = (96, 72);
    let prev = scene(w, h, 0.0, 0.0);
    let cur = scene(w, h, 3.0, -2.0);
    let mut s = VgSimilarity::default();
    let code = unsafe { vg_estimate_similarity(prev.data.as_ptr(), cur.data.as_ptr(), w, h, 1, &mut s) };
    assert_eq!(code, VG_OK, "{}", last_error());
    assert!((s.tx - 3.0).abs() < 0.3 && (s.ty + 2.0).abs() < 0.3, "{s:?}");
    assert!(s.theta.abs() < 0.01 && (s.scale - 1.0).abs() < 0.01, "{s:?}");
    assert!(s.rms.is_finite() && s.rms < 1.0);

    let flat = vec![128f32; w * h];
    let code = unsafe { vg_estimate_similarity(flat.as_ptr(), flat.as_ptr(), w, h, 1, &mut s) };
    assert_eq!(code, VG_ERR_ESTIMATION_FAILED);
}
