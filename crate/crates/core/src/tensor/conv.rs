//! 3D (and 2D, as 3D with a unit time axis) convolution and its transpose.
//!
//! Both operations share one geometry: a "large" volume and a "small" volume
//! related by a strided window. A convolution maps large to small; the
//! transposed convolution maps small to large and is the exact adjoint. The
//! weight matrix has the same layout for both, `(small_channels,
//! large_channels, kt, kh, kw)`, which is PyTorch's `(out, in, ..)` for
//! convolution and `(in, out, ..)` for the transpose.
//!
//! The optimized path lowers each sample to a patch matrix (vol2col) and runs a
//! GEMM. [`reference_conv`] and [`reference_conv_transpose`] are the direct
//! nested-loop definitions, kept for testing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Element, Result, Tensor, TensorError};

const AXES: [&str; 3] = ["time", "height", "width"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new3d(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Self {
        Self {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    /// Spatial-only spec; time kernel and stride are 1, time padding 0.
    pub fn new2d(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Self {
        Self::new3d(
            in_channels,
            out_channels,
            [1, kernel[0], kernel[1]],
            [1, stride[0], stride[1]],
            [0, padding[0], padding[1]],
        )
    }

    pub fn cubic(in_channels: usize, out_channels: usize, k: usize, s: usize, p: usize) -> Self {
        Self::new3d(in_channels, out_channels, [k; 3], [s; 3], [p; 3])
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.iter().chain(&self.stride).any(|&v| v == 0) {
            return Err(TensorError::InvalidSpec(format!(
                "kernel {:?} and stride {:?} must be >= 1",
                self.kernel, self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::InvalidSpec("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    /// `floor((n + 2p - k) / s) + 1` per axis.
    pub fn conv_output(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(TensorError::EmptyOutput {
                    axis: AXES[a],
                    input: input[a],
                    kernel: self.kernel[a],
                    stride: self.stride[a],
                    padding: self.padding[a],
                });
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// `(n - 1) s - 2p + k` per axis.
    pub fn transpose_output(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a] - 1) * self.stride[a] + self.kernel[a];
            if full <= 2 * self.padding[a] {
                return Err(TensorError::EmptyOutput {
                    axis: AXES[a],
                    input: input[a],
                    kernel: self.kernel[a],
                    stride: self.stride[a],
                    padding: self.padding[a],
                });
            }
            out[a] = full - 2 * self.padding[a];
        }
        Ok(out)
    }

    /// Weight shape for a 3D convolution (`transpose == false`) or its transpose.
    pub fn weight_shape(&self, transpose: bool) -> Vec<usize> {
        let (a, b) = if transpose {
            (self.in_channels, self.out_channels)
        } else {
            (self.out_channels, self.in_channels)
        };
        vec![a, b, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    pub fn weight_shape_2d(&self, transpose: bool) -> Vec<usize> {
        let w = self.weight_shape(transpose);
        vec![w[0], w[1], w[3], w[4]]
    }
}

/// Resolved geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub large_channels: usize,
    pub small_channels: usize,
    pub large: [usize; 3],
    pub small: [usize; 3],
    pub spec: ConvSpec,
}

impl ConvDims {
    fn large_len(&self) -> usize {
        self.large.iter().product()
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    fn patch_rows(&self) -> usize {
        self.large_channels * self.spec.kernel_volume()
    }

    pub fn large_shape(&self, rank: usize) -> Vec<usize> {
        volume_shape(self.batch, self.large_channels, self.large, rank)
    }

    pub fn small_shape(&self, rank: usize) -> Vec<usize> {
        volume_shape(self.batch, self.small_channels, self.small, rank)
    }

    /// Geometry for `conv(input)`; `input` is `(N, C, T, H, W)` or `(N, C, H, W)`.
    pub fn for_conv(input_shape: &[usize], spec: &ConvSpec) -> Result<Self> {
        let (batch, channels, vol) = split_volume(input_shape, spec)?;
        if channels != spec.in_channels {
            return Err(TensorError::ShapeMismatch {
                axis: "input channels".into(),
                expected: spec.in_channels,
                actual: channels,
            });
        }
        let small = spec.conv_output(vol)?;
        Ok(Self {
            batch,
            large_channels: spec.in_channels,
            small_channels: spec.out_channels,
            large: vol,
            small,
            spec: *spec,
        })
    }

    pub fn for_transpose(input_shape: &[usize], spec: &ConvSpec) -> Result<Self> {
        let (batch, channels, vol) = split_volume(input_shape, spec)?;
        if channels != spec.in_channels {
            return Err(TensorError::ShapeMismatch {
                axis: "input channels".into(),
                expected: spec.in_channels,
                actual: channels,
            });
        }
        let large = spec.transpose_output(vol)?;
        Ok(Self {
            batch,
            large_channels: spec.out_channels,
            small_channels: spec.in_channels,
            large,
            small: vol,
            spec: *spec,
        })
    }
}

fn volume_shape(batch: usize, channels: usize, vol: [usize; 3], rank: usize) -> Vec<usize> {
    if rank == 4 {
        vec![batch, channels, vol[1], vol[2]]
    } else {
        vec![batch, channels, vol[0], vol[1], vol[2]]
    }
}

fn split_volume(shape: &[usize], spec: &ConvSpec) -> Result<(usize, usize, [usize; 3])> {
    match shape {
        [n, c, t, h, w] => Ok((*n, *c, [*t, *h, *w])),
        [n, c, h, w] => {
            if spec.kernel[0] != 1 || spec.stride[0] != 1 || spec.padding[0] != 0 {
                return Err(TensorError::InvalidSpec(
                    "2D input needs a unit time kernel/stride and zero time padding".into(),
                ));
            }
            Ok((*n, *c, [1, *h, *w]))
        }
        _ => Err(TensorError::InvalidShape(
            shape.to_vec(),
            "expected (N, C, H, W) or (N, C, T, H, W)".into(),
        )),
    }
}

fn check_weight<T: Element>(w: &Tensor<T>, dims: &ConvDims, transpose: bool) -> Result<()> {
    let spec = &dims.spec;
    let expected = dims.small_channels * dims.large_channels * spec.kernel_volume();
    let lead = if transpose {
        spec.in_channels
    } else {
        spec.out_channels
    };
    if w.len() != expected || w.shape()[0] != lead {
        return Err(TensorError::ShapeMismatch {
            axis: "weight".into(),
            expected,
            actual: w.len(),
        });
    }
    Ok(())
}

fn check_bias<T: Element>(b: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = b {
        if b.len() != channels {
            return Err(TensorError::ShapeMismatch {
                axis: "bias".into(),
                expected: channels,
                actual: b.len(),
            });
        }
    }
    Ok(())
}

/// Unfold one large volume `(Cl, T, H, W)` into `(Cl*kvol, small_len)` patches.
pub(crate) fn vol2col<T: Element>(large: &[T], d: &ConvDims, col: &mut [T]) {
    let [kt, kh, kw] = d.spec.kernel;
    let [st, sh, sw] = d.spec.stride;
    let [pt, ph, pw] = d.spec.padding;
    let [lt, lh, lw] = d.large;
    let [ot, oh, ow] = d.small;
    let ls = d.small_len();
    let mut row = 0;
    for c in 0..d.large_channels {
        let plane = &large[c * lt * lh * lw..(c + 1) * lt * lh * lw];
        for a in 0..kt {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * ls..(row + 1) * ls];
                    let mut idx = 0;
                    for t in 0..ot {
                        let it = (t * st + a) as isize - pt as isize;
                        if it < 0 || it >= lt as isize {
                            dst[idx..idx + oh * ow].fill(T::zero());
                            idx += oh * ow;
                            continue;
                        }
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            if iy < 0 || iy >= lh as isize {
                                dst[idx..idx + ow].fill(T::zero());
                                idx += ow;
                                continue;
                            }
                            let src = &plane[(it as usize * lh + iy as usize) * lw..][..lw];
                            for x in 0..ow {
                                let ix = (x * sw + e) as isize - pw as isize;
                                dst[idx] = if ix >= 0 && (ix as usize) < lw {
                                    src[ix as usize]
                                } else {
                                    T::zero()
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Fold patches back, accumulating into `large` (the adjoint of [`vol2col`]).
pub(crate) fn col2vol<T: Element>(col: &[T], d: &ConvDims, large: &mut [T]) {
    let [kt, kh, kw] = d.spec.kernel;
    let [st, sh, sw] = d.spec.stride;
    let [pt, ph, pw] = d.spec.padding;
    let [lt, lh, lw] = d.large;
    let [ot, oh, ow] = d.small;
    let ls = d.small_len();
    let mut row = 0;
    for c in 0..d.large_channels {
        let plane = &mut large[c * lt * lh * lw..(c + 1) * lt * lh * lw];
        for a in 0..kt {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * ls..(row + 1) * ls];
                    let mut idx = 0;
                    for t in 0..ot {
                        let it = (t * st + a) as isize - pt as isize;
                        if it < 0 || it >= lt as isize {
                            idx += oh * ow;
                            continue;
                        }
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            if iy < 0 || iy >= lh as isize {
                                idx += ow;
                                continue;
                            }
                            let dst = &mut plane[(it as usize * lh + iy as usize) * lw..][..lw];
                            for x in 0..ow {
                                let ix = (x * sw + e) as isize - pw as isize;
                                if ix >= 0 && (ix as usize) < lw {
                                    dst[ix as usize] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn is_pointwise(d: &ConvDims) -> bool {
    d.spec.kernel == [1, 1, 1] && d.spec.stride == [1, 1, 1] && d.spec.padding == [0, 0, 0]
}

/// Large volume -> small volume.
pub(crate) fn conv_forward<T: Element>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
) -> Vec<T> {
    let (ll, ls, rows) = (d.large_channels * d.large_len(), d.small_len(), d.patch_rows());
    let cs = d.small_channels;
    let mut out = vec![T::zero(); d.batch * cs * ls];
    out.par_chunks_mut(cs * ls)
        .zip(x.par_chunks(ll))
        .for_each(|(y, xs)| {
            if is_pointwise(d) {
                T::gemm(cs, rows, ls, T::one(), w, rows as isize, 1, xs, ls as isize, 1, T::zero(), y, ls as isize, 1);
            } else {
                let mut col = vec![T::zero(); rows * ls];
                vol2col(xs, d, &mut col);
                T::gemm(cs, rows, ls, T::one(), w, rows as isize, 1, &col, ls as isize, 1, T::zero(), y, ls as isize, 1);
            }
            if let Some(b) = bias {
                for (c, chan) in y.chunks_mut(ls).enumerate() {
                    chan.iter_mut().for_each(|v| *v += b[c]);
                }
            }
        });
    out
}

/// Small volume -> large volume.
pub(crate) fn conv_transpose_forward<T: Element>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
) -> Vec<T> {
    let (ll, ls, rows) = (d.large_channels * d.large_len(), d.small_len(), d.patch_rows());
    let cs = d.small_channels;
    let mut out = vec![T::zero(); d.batch * ll];
    out.par_chunks_mut(ll)
        .zip(x.par_chunks(cs * ls))
        .for_each(|(y, xs)| {
            if is_pointwise(d) {
                T::gemm(rows, cs, ls, T::one(), w, 1, rows as isize, xs, ls as isize, 1, T::zero(), y, ls as isize, 1);
            } else {
                let mut col = vec![T::zero(); rows * ls];
                T::gemm(rows, cs, ls, T::one(), w, 1, rows as isize, xs, ls as isize, 1, T::zero(), &mut col, ls as isize, 1);
                col2vol(&col, d, y);
            }
            if let Some(b) = bias {
                let lv = d.large_len();
                for (c, chan) in y.chunks_mut(lv).enumerate() {
                    chan.iter_mut().for_each(|v| *v += b[c]);
                }
            }
        });
    out
}

/// Gradient of the large side given the gradient of the small side.
pub(crate) fn large_grad<T: Element>(dsmall: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let (ll, ls, rows) = (d.large_channels * d.large_len(), d.small_len(), d.patch_rows());
    let cs = d.small_channels;
    let mut dx = vec![T::zero(); d.batch * ll];
    dx.par_chunks_mut(ll)
        .zip(dsmall.par_chunks(cs * ls))
        .for_each(|(dxs, dy)| {
            if is_pointwise(d) {
                T::gemm(rows, cs, ls, T::one(), w, 1, rows as isize, dy, ls as isize, 1, T::zero(), dxs, ls as isize, 1);
            } else {
                let mut col = vec![T::zero(); rows * ls];
                T::gemm(rows, cs, ls, T::one(), w, 1, rows as isize, dy, ls as isize, 1, T::zero(), &mut col, ls as isize, 1);
                col2vol(&col, d, dxs);
            }
        });
    dx
}

/// Gradient of the small side given the gradient of the large side.
pub(crate) fn small_grad<T: Element>(dlarge: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    conv_forward(dlarge, w, None, d)
}

/// Weight gradient `sum_n small[n] * patches(large[n])^T`, reduced in batch order.
pub(crate) fn weight_grad<T: Element>(small: &[T], large: &[T], d: &ConvDims) -> Vec<T> {
    let (ll, ls, rows) = (d.large_channels * d.large_len(), d.small_len(), d.patch_rows());
    let cs = d.small_channels;
    let mut dw = vec![T::zero(); cs * rows];
    let mut col = if is_pointwise(d) {
        Vec::new()
    } else {
        vec![T::zero(); rows * ls]
    };
    for n in 0..d.batch {
        let s = &small[n * cs * ls..(n + 1) * cs * ls];
        let l = &large[n * ll..(n + 1) * ll];
        let patches: &[T] = if is_pointwise(d) {
            l
        } else {
            vol2col(l, d, &mut col);
            &col
        };
        T::gemm(cs, ls, rows, T::one(), s, ls as isize, 1, patches, 1, ls as isize, T::one(), &mut dw, rows as isize, 1);
    }
    dw
}

/// Per-channel sum over batch and volume.
pub(crate) fn channel_sums<T: Element>(x: &[T], batch: usize, channels: usize) -> Vec<T> {
    let per = x.len() / (batch * channels);
    let mut out = vec![T::zero(); channels];
    for chunk in x.chunks(per).enumerate() {
        let c = chunk.0 % channels;
        out[c] += chunk.1.iter().fold(T::zero(), |a, &b| a + b);
    }
    out
}

fn as_rank(shape: &[usize]) -> usize {
    shape.len()
}

/// Optimized convolution on plain values.
pub fn conv<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let d = ConvDims::for_conv(input.shape(), spec)?;
    check_weight(weight, &d, false)?;
    check_bias(bias, d.small_channels)?;
    let out = conv_forward(input.data(), weight.data(), bias.map(|b| b.data()), &d);
    Tensor::new(d.small_shape(as_rank(input.shape())), out)
}

/// Optimized transposed convolution on plain values.
pub fn conv_transpose<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let d = ConvDims::for_transpose(input.shape(), spec)?;
    check_weight(weight, &d, true)?;
    check_bias(bias, d.large_channels)?;
    let out = conv_transpose_forward(input.data(), weight.data(), bias.map(|b| b.data()), &d);
    Tensor::new(d.large_shape(as_rank(input.shape())), out)
}

pub(crate) fn validate_conv_args<T: Element>(
    input_shape: &[usize],
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    transpose: bool,
) -> Result<ConvDims> {
    let d = if transpose {
        ConvDims::for_transpose(input_shape, spec)?
    } else {
        ConvDims::for_conv(input_shape, spec)?
    };
    check_weight(weight, &d, transpose)?;
    check_bias(bias, if transpose { d.large_channels } else { d.small_channels })?;
    Ok(d)
}

/// Direct nested-loop convolution: the definition, not the fast path.
pub fn reference_conv<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let d = validate_conv_args(input.shape(), spec, weight, bias, false)?;
    let [lt, lh, lw] = d.large;
    let [ot, oh, ow] = d.small;
    let [kt, kh, kw] = spec.kernel;
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![T::zero(); d.batch * d.small_channels * ot * oh * ow];
    let mut o = 0;
    for n in 0..d.batch {
        for co in 0..d.small_channels {
            for t in 0..ot {
                for y in 0..oh {
                    for z in 0..ow {
                        let mut acc = bias.map_or(T::zero(), |b| b.data()[co]);
                        for ci in 0..d.large_channels {
                            for a in 0..kt {
                                let it = (t * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                if it < 0 || it >= lt as isize {
                                    continue;
                                }
                                for b in 0..kh {
                                    let iy = (y * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                                    if iy < 0 || iy >= lh as isize {
                                        continue;
                                    }
                                    for c in 0..kw {
                                        let ix = (z * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                                        if ix < 0 || ix >= lw as isize {
                                            continue;
                                        }
                                        let xi = (((n * d.large_channels + ci) * lt + it as usize) * lh
                                            + iy as usize)
                                            * lw
                                            + ix as usize;
                                        let wi = (((co * d.large_channels + ci) * kt + a) * kh + b) * kw + c;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[o] = acc;
                        o += 1;
                    }
                }
            }
        }
    }
    Tensor::new(d.small_shape(input.ndim()), out)
}

/// Direct scatter definition of the transposed convolution.
pub fn reference_conv_transpose<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let d = validate_conv_args(input.shape(), spec, weight, bias, true)?;
    let [lt, lh, lw] = d.large;
    let [it_, ih, iw] = d.small;
    let [kt, kh, kw] = spec.kernel;
    let (x, w) = (input.data(), weight.data());
    let cl = d.large_channels;
    let mut out = vec![T::zero(); d.batch * cl * lt * lh * lw];
    for n in 0..d.batch {
        for ci in 0..d.small_channels {
            for t in 0..it_ {
                for y in 0..ih {
                    for z in 0..iw {
                        let v = x[(((n * d.small_channels + ci) * it_ + t) * ih + y) * iw + z];
                        for co in 0..cl {
                            for a in 0..kt {
                                let ot = (t * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                if ot < 0 || ot >= lt as isize {
                                    continue;
                                }
                                for b in 0..kh {
                                    let oy = (y * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                                    if oy < 0 || oy >= lh as isize {
                                        continue;
                                    }
                                    for c in 0..kw {
                                        let ox = (z * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                                        if ox < 0 || ox >= lw as isize {
                                            continue;
                                        }
                                        let wi = (((ci * cl + co) * kt + a) * kh + b) * kw + c;
                                        let oi = (((n * cl + co) * lt + ot as usize) * lh + oy as usize) * lw
                                            + ox as usize;
                                        out[oi] += v * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        let vol = lt * lh * lw;
        for (i, chunk) in out.chunks_mut(vol).enumerate() {
            let bv = b.data()[i % cl];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(d.large_shape(input.ndim()), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn output_shape_formulas() {
        let s = ConvSpec::cubic(3, 64, 4, 2, 1);
        assert_eq!(s.conv_output([32, 64, 64]).unwrap(), [16, 32, 32]);
        let t = ConvSpec::cubic(512, 256, 4, 2, 1);
        assert_eq!(t.transpose_output([2, 4, 4]).unwrap(), [4, 8, 8]);
        let first = ConvSpec::new3d(100, 512, [2, 4, 4], [1, 1, 1], [0, 0, 0]);
        assert_eq!(first.transpose_output([1, 1, 1]).unwrap(), [2, 4, 4]);
        let s2 = ConvSpec::new2d(512, 256, [4, 4], [2, 2], [1, 1]);
        assert_eq!(s2.transpose_output([1, 4, 4]).unwrap(), [1, 8, 8]);
        let s3 = ConvSpec::new2d(3, 64, [4, 4], [2, 2], [1, 1]);
        assert_eq!(s3.conv_output([1, 64, 64]).unwrap(), [1, 32, 32]);
    }

    #[test]
    fn empty_output_names_axis() {
        let s = ConvSpec::new3d(1, 1, [4, 2, 2], [1, 1, 1], [0, 0, 0]);
        match s.conv_output([2, 8, 8]) {
            Err(TensorError::EmptyOutput { axis, .. }) => assert_eq!(axis, "time"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let s = ConvSpec::cubic(3, 2, 1, 1, 0);
        let x = Tensor::<f32>::zeros(&[1, 4, 2, 2, 2]);
        let w = Tensor::<f32>::zeros(&s.weight_shape(false));
        assert!(matches!(
            conv(&x, &s, &w, None),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f32>::randn(&[2, 1, 3, 4, 5], 1.0, &mut rng);
        let s = ConvSpec::cubic(1, 1, 1, 1, 0);
        let w = Tensor::ones(&s.weight_shape(false));
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv(&x, &s, &w, Some(&b)).unwrap(), x);
        assert_eq!(conv_transpose(&x, &s, &w, Some(&b)).unwrap(), x);
        let x2 = Tensor::<f32>::randn(&[2, 1, 4, 5], 1.0, &mut rng);
        let s2 = ConvSpec::new2d(1, 1, [1, 1], [1, 1], [0, 0]);
        let w2 = Tensor::ones(&s2.weight_shape_2d(false));
        assert_eq!(conv(&x2, &s2, &w2, None).unwrap(), x2);
        assert_eq!(conv_transpose(&x2, &s2, &w2, None).unwrap(), x2);
    }

    #[test]
    fn ones_kernel_sums_volume() {
        let s = ConvSpec::cubic(1, 1, 4, 2, 0);
        let x = Tensor::<f32>::ones(&[1, 1, 8, 8, 8]);
        let w = Tensor::ones(&s.weight_shape(false));
        let y = conv(&x, &s, &w, Some(&Tensor::zeros(&[1]))).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 64.0));
    }

    #[test]
    fn paper_scale_shapes() {
        let s = ConvSpec::cubic(3, 8, 4, 2, 1);
        let d = ConvDims::for_conv(&[1, 3, 32, 64, 64], &s).unwrap();
        assert_eq!(d.small, [16, 32, 32]);
        let t = ConvSpec::cubic(512, 256, 4, 2, 1);
        let d = ConvDims::for_transpose(&[1, 512, 2, 4, 4], &t).unwrap();
        assert_eq!(d.large_shape(5), vec![1, 256, 4, 8, 8]);
    }

    #[test]
    fn fast_path_matches_reference() {
        let mut rng = Rng::new(5);
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (2, 2, 0), (3, 2, 2)] {
            let spec = ConvSpec::new3d(3, 4, [k, k, k.max(2) - 1], [s, s, 1], [p, p, 0]);
            let x = Tensor::<f64>::randn(&[2, 3, 6, 7, 5], 1.0, &mut rng);
            let w = Tensor::randn(&spec.weight_shape(false), 1.0, &mut rng);
            let b = Tensor::randn(&[4], 1.0, &mut rng);
            let fast = conv(&x, &spec, &w, Some(&b)).unwrap();
            let slow = reference_conv(&x, &spec, &w, Some(&b)).unwrap();
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10);
            }
            let wt = Tensor::randn(&spec.weight_shape(true), 1.0, &mut rng);
            let bt = Tensor::randn(&[4], 1.0, &mut rng);
            let xt = Tensor::<f64>::randn(&[2, 3, 3, 4, 3], 1.0, &mut rng);
            let fast = conv_transpose(&xt, &spec, &wt, Some(&bt)).unwrap();
            let slow = reference_conv_transpose(&xt, &spec, &wt, Some(&bt)).unwrap();
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
