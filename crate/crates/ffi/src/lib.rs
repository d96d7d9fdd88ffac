//! C ABI over vidgan: checkpoint loading, clip generation, clip container I/O
//! and adjacent-frame similarity estimation.
//!
//! Every fallible function returns a status code (`VG_OK` or a negative
//! `VG_ERR_*`). After a failure, `vg_last_error_message` returns a
//! description on the same thread. Handles are opaque and released with their
//! `*_free` function; passing NULL to a free function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use vidgan::cli::{generate_clips, CliError};
use vidgan::nets::checkpoint::{CheckpointError, ModelCheckpoint};
use vidgan::nets::NetConfig;
use vidgan::tensor::Tensor;
use vidgan::videoio::{estimate_adjacent, read_clip, write_clip, ClipError, Image, StabilizeConfig, VideoError};

pub const VG_OK: i32 = 0;
pub const VG_ERR_NULL_POINTER: i32 = -1;
pub const VG_ERR_INVALID_ARGUMENT: i32 = -2;
pub const VG_ERR_IO: i32 = -3;
/// Bad magic bytes, version, checksum, truncation or corrupt contents.
pub const VG_ERR_FORMAT: i32 = -4;
pub const VG_ERR_BUFFER_TOO_SMALL: i32 = -5;
pub const VG_ERR_ESTIMATION_FAILED: i32 = -6;
/// The checkpoint kind does not support the operation.
pub const VG_ERR_UNSUPPORTED: i32 = -7;
pub const VG_ERR_PANIC: i32 = -99;

/// A loaded checkpoint.
pub struct VgModel {
    checkpoint: ModelCheckpoint,
    config: NetConfig,
}

/// A clip `(3, T, H, W)` of f32 samples.
pub struct VgClip {
    clip: Tensor,
}

/// Maps points of the current frame onto the previous frame:
/// `p' = scale * R(theta) * p + (tx, ty)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VgSimilarity {
    pub theta: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    /// Rms reprojection error of the inlier matches, in pixels.
    pub rms: f64,
}

struct Failure(i32, String);

type Outcome<T = ()> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Outcome) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VG_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            VG_ERR_PANIC
        }
    }
}

fn fail<T>(code: i32, msg: impl Into<String>) -> Outcome<T> {
    Err(Failure(code, msg.into()))
}

fn non_null<T>(p: *const T, what: &str) -> Outcome {
    if p.is_null() {
        fail(VG_ERR_NULL_POINTER, format!("{what} is NULL"))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Outcome<PathBuf> {
    non_null(p, "path")?;
    match CStr::from_ptr(p).to_str() {
        Ok(s) if !s.is_empty() => Ok(PathBuf::from(s)),
        Ok(_) => fail(VG_ERR_INVALID_ARGUMENT, "path is empty"),
        Err(_) => fail(VG_ERR_INVALID_ARGUMENT, "path is not valid UTF-8"),
    }
}

fn checkpoint_failure(e: CheckpointError) -> Failure {
    let code = match e {
        CheckpointError::Io(_) => VG_ERR_IO,
        _ => VG_ERR_FORMAT,
    };
    Failure(code, e.to_string())
}

fn clip_failure(e: ClipError) -> Failure {
    let code = match e {
        ClipError::Io(_) => VG_ERR_IO,
        ClipError::Invalid(_) => VG_ERR_INVALID_ARGUMENT,
        _ => VG_ERR_FORMAT,
    };
    Failure(code, e.to_string())
}

unsafe fn write_shape(shape: *mut usize, dims: [usize; 4]) -> Outcome {
    non_null(shape, "shape")?;
    std::slice::from_raw_parts_mut(shape, 4).copy_from_slice(&dims);
    Ok(())
}

unsafe fn copy_out(values: &[f32], out: *mut f32, out_len: usize) -> Outcome {
    non_null(out, "out")?;
    if out_len < values.len() {
        return fail(
            VG_ERR_BUFFER_TOO_SMALL,
            format!("buffer holds {out_len} floats, {} needed", values.len()),
        );
    }
    std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns its full length in
/// bytes, excluding the terminator. Returns 0 when no error was recorded.
/// `buf` may be NULL to query the length.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vg_model_load(path: *const c_char, out: *mut *mut VgModel) -> i32 {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let path = path_arg(path)?;
        let checkpoint = ModelCheckpoint::load(&path).map_err(checkpoint_failure)?;
        let config = checkpoint.meta.config;
        *out = Box::into_raw(Box::new(VgModel { checkpoint, config }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from `vg_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vg_model_free(model: *mut VgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the per-clip shape `(3, T, H, W)` of the model's output to
/// `shape[0..4]`.
///
/// # Safety
/// `model` must be a live handle and `shape` point to 4 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn vg_model_clip_shape(model: *const VgModel, shape: *mut usize) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        write_shape(shape, (*model).config.clip_shape())
    })
}

/// Samples `count` clips from a GAN or baseline checkpoint into `out`,
/// clip after clip, each laid out as `vg_model_clip_shape`. The result is a
/// pure function of the checkpoint and `seed`, and matches the command-line
/// `generate` for the same arguments.
///
/// # Safety
/// `model` must be a live handle and `out` point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn vg_model_generate(
    model: *const VgModel,
    count: usize,
    seed: u64,
    out: *mut f32,
    out_len: usize,
) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        if count == 0 {
            return fail(VG_ERR_INVALID_ARGUMENT, "count must be at least 1");
        }
        let m = &*model;
        let per: usize = m.config.clip_shape().iter().product();
        let need = per.checked_mul(count).ok_or_else(|| Failure(VG_ERR_INVALID_ARGUMENT, "count too large".into()))?;
        if out_len < need {
            return fail(VG_ERR_BUFFER_TOO_SMALL, format!("buffer holds {out_len} floats, {need} needed"));
        }
        let clips = generate_clips(&m.checkpoint, count, seed).map_err(|e| match e {
            CliError::Runtime(msg) if msg.starts_with("cannot generate") => Failure(VG_ERR_UNSUPPORTED, msg),
            other => Failure(VG_ERR_FORMAT, other.to_string()),
        })?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, clip) in dst.chunks_mut(per).zip(&clips) {
            chunk.copy_from_slice(clip.data());
        }
        Ok(())
    })
}

/// Reads a clip container file into `*out`; u8 payloads are normalized to
/// `[-1, 1]`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vg_clip_read(path: *const c_char, out: *mut *mut VgClip) -> i32 {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let path = path_arg(path)?;
        let clip = read_clip(&path).map_err(clip_failure)?;
        *out = Box::into_raw(Box::new(VgClip { clip }));
        Ok(())
    })
}

/// Writes `shape[0] * shape[1] * shape[2] * shape[3]` samples from `data` as
/// an f32 clip container. `shape[0]` must be 3 and samples must lie in
/// `[-1, 1]`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `shape` point to 4 `size_t` and
/// `data` to the product of `shape` readable floats.
#[no_mangle]
pub unsafe extern "C" fn vg_clip_write(path: *const c_char, data: *const f32, shape: *const usize) -> i32 {
    guard(|| {
        non_null(data, "data")?;
        non_null(shape, "shape")?;
        let path = path_arg(path)?;
        let dims = std::slice::from_raw_parts(shape, 4).to_vec();
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure(VG_ERR_INVALID_ARGUMENT, format!("bad shape {dims:?}")))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let clip = Tensor::new(dims, values).map_err(|e| Failure(VG_ERR_INVALID_ARGUMENT, e.to_string()))?;
        write_clip(&path, &clip).map_err(clip_failure)
    })
}

/// # Safety
/// `clip` must be NULL or a handle from `vg_clip_read` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vg_clip_free(clip: *mut VgClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

/// Writes the clip shape `(3, T, H, W)` to `shape[0..4]`.
///
/// # Safety
/// `clip` must be a live handle and `shape` point to 4 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn vg_clip_shape(clip: *const VgClip, shape: *mut usize) -> i32 {
    guard(|| {
        non_null(clip, "clip")?;
        let s = (*clip).clip.shape();
        write_shape(shape, [s[0], s[1], s[2], s[3]])
    })
}

/// Copies the clip's samples (channel, then frame, then row) into `out`.
///
/// # Safety
/// `clip` must be a live handle and `out` point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn vg_clip_data(clip: *const VgClip, out: *mut f32, out_len: usize) -> i32 {
    guard(|| {
        non_null(clip, "clip")?;
        copy_out((*clip).clip.data(), out, out_len)
    })
}

/// Estimates the similarity transform taking `cur` onto `prev` from matched
/// keypoints with RANSAC, refined photometrically. Frames are planar
/// (channel, row, column) with samples in `[0, 255]`; 1 or 3 channels, at
/// least 32x32.
///
/// # Safety
/// `prev` and `cur` must each point to `width * height * channels` readable
/// floats and `out` to a writable `VgSimilarity`.
#[no_mangle]
pub unsafe extern "C" fn vg_estimate_similarity(
    prev: *const f32,
    cur: *const f32,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut VgSimilarity,
) -> i32 {
    guard(|| {
        non_null(prev, "prev")?;
        non_null(cur, "cur")?;
        non_null(out, "out")?;
        if !(channels == 1 || channels == 3) || width == 0 || height == 0 {
            return fail(
                VG_ERR_INVALID_ARGUMENT,
                format!("unsupported frame {width}x{height}x{channels}"),
            );
        }
        let n = width * height * channels;
        let image = |p: *const f32| Image {
            data: std::slice::from_raw_parts(p, n).to_vec(),
            ..Image::new(width, height, channels)
        };
        let (t, rms) = estimate_adjacent(&image(prev), &image(cur), &StabilizeConfig::default()).map_err(|e| {
            let code = match e {
                VideoError::TooFewMatches(_) | VideoError::EstimationFailed { .. } => VG_ERR_ESTIMATION_FAILED,
                VideoError::FrameTooSmall { .. } => VG_ERR_INVALID_ARGUMENT,
                _ => VG_ERR_IO,
            };
            Failure(code, e.to_string())
        })?;
        *out = VgSimilarity {
            theta: t.theta,
            scale: t.s,
            tx: t.tx,
            ty: t.ty,
            rms,
        };
        Ok(())
    })
}
