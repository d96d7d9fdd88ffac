#ifndef VIDGAN_H
#define VIDGAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define VG_OK 0

#define VG_ERR_NULL_POINTER -1

#define VG_ERR_INVALID_ARGUMENT -2

#define VG_ERR_IO -3

// Bad magic bytes, version, checksum, truncation or corrupt contents.
#define VG_ERR_FORMAT -4

#define VG_ERR_BUFFER_TOO_SMALL -5

#define VG_ERR_ESTIMATION_FAILED -6

// The checkpoint kind does not support the operation.
#define VG_ERR_UNSUPPORTED -7

#define VG_ERR_PANIC -99

// A clip `(3, T, H, W)` of f32 samples.
typedef struct VgClip VgClip;

// A loaded checkpoint.
typedef struct VgModel VgModel;

// Maps points of the current frame onto the previous frame:
// `p' = scale * R(theta) * p + (tx, ty)`.
typedef struct VgSimilarity {
  double theta;
  double scale;
  double tx;
  double ty;
  // Rms reprojection error of the inlier matches, in pixels.
  double rms;
} VgSimilarity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`) and returns its full length in
// bytes, excluding the terminator. Returns 0 when no error was recorded.
// `buf` may be NULL to query the length.
//
// # Safety
// `buf` must be NULL or point to `len` writable bytes.
size_t vg_last_error_message(char *buf, size_t len);

// Loads a checkpoint file into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t vg_model_load(const char *path, struct VgModel **out);

// # Safety
// `model` must be NULL or a handle from `vg_model_load` not yet freed.
void vg_model_free(struct VgModel *model);

// Writes the per-clip shape `(3, T, H, W)` of the model's output to
// `shape[0..4]`.
//
// # Safety
// `model` must be a live handle and `shape` point to 4 writable `size_t`.
int32_t vg_model_clip_shape(const struct VgModel *model, size_t *shape);

// Samples `count` clips from a GAN or baseline checkpoint into `out`,
// clip after clip, each laid out as `vg_model_clip_shape`. The result is a
// pure function of the checkpoint and `seed`, and matches the command-line
// `generate` for the same arguments.
//
// # Safety
// `model` must be a live handle and `out` point to `out_len` writable floats.
int32_t vg_model_generate(const struct VgModel *model,
                          size_t count,
                          uint64_t seed,
                          float *out,
                          size_t out_len);

// Reads a clip container file into `*out`; u8 payloads are normalized to
// `[-1, 1]`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t vg_clip_read(const char *path, struct VgClip **out);

// Writes `shape[0] * shape[1] * shape[2] * shape[3]` samples from `data` as
// an f32 clip container. `shape[0]` must be 3 and samples must lie in
// `[-1, 1]`.
//
// # Safety
// `path` must be a NUL-terminated string, `shape` point to 4 `size_t` and
// `data` to the product of `shape` readable floats.
int32_t vg_clip_write(const char *path, const float *data, const size_t *shape);

// # Safety
// `clip` must be NULL or a handle from `vg_clip_read` not yet freed.
void vg_clip_free(struct VgClip *clip);

// Writes the clip shape `(3, T, H, W)` to `shape[0..4]`.
//
// # Safety
// `clip` must be a live handle and `shape` point to 4 writable `size_t`.
int32_t vg_clip_shape(const struct VgClip *clip, size_t *shape);

// Copies the clip's samples (channel, then frame, then row) into `out`.
//
// # Safety
// `clip` must be a live handle and `out` point to `out_len` writable floats.
int32_t vg_clip_data(const struct VgClip *clip, float *out, size_t out_len);

// Estimates the similarity transform taking `cur` onto `prev` from matched
// keypoints with RANSAC, refined photometrically. Frames are planar
// (channel, row, column) with samples in `[0, 255]`; 1 or 3 channels, at
// least 32x32.
//
// # Safety
// `prev` and `cur` must each point to `width * height * channels` readable
// floats and `out` to a writable `VgSimilarity`.
int32_t vg_estimate_similarity(const float *prev,
                               const float *cur,
                               size_t width,
                               size_t height,
                               size_t channels,
                               struct VgSimilarity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDGAN_H */
