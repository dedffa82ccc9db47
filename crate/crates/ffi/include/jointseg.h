/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef JOINTSEG_H
#define JOINTSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum JsegStatus {
  JSEG_STATUS_OK = 0,
  // Null pointer, zero size or non-UTF-8 text.
  JSEG_STATUS_INVALID_ARGUMENT = 1,
  JSEG_STATUS_PARAMETER = 2,
  JSEG_STATUS_DIMENSION = 3,
  JSEG_STATUS_DEGENERATE = 4,
  JSEG_STATUS_CONTRACT = 5,
  JSEG_STATUS_NUMERICAL = 6,
  JSEG_STATUS_CONFIG = 7,
  JSEG_STATUS_IO = 8,
  // The library panicked; this is a bug.
  JSEG_STATUS_INTERNAL = 9,
} JsegStatus;

// Model and solver parameters.
typedef struct JsegParams JsegParams;

// Final state and log of a segmentation run.
typedef struct JsegResult JsegResult;

// Precomputed operators for one image.
typedef struct JsegSegmenter JsegSegmenter;

// Scores of one phase against a reference.
typedef struct JsegMetrics {
  double dsc;
  double iou;
  double accuracy;
  double kappa;
} JsegMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *jseg_last_error(void);

// Default parameters with `n_phases` phases.
//
// # Safety
// `out` must be a valid pointer to write a handle to.
enum JsegStatus jseg_params_new(size_t n_phases, struct JsegParams **out);

// Parameters from `key = value` text in the experiment-file syntax. Keys
// that do not belong to the model (image sources, output paths) are
// accepted and ignored.
//
// # Safety
// `text` must be a nul-terminated string and `out` a valid pointer.
enum JsegStatus jseg_params_parse(const char *text, struct JsegParams **out);

// # Safety
// `params` must come from this library and not be used afterwards; null is ignored.
void jseg_params_free(struct JsegParams *params);

// Prepares segmentation of a `width × height` image with nonnegative values.
//
// # Safety
// `image` must hold `width * height` values; `params` must be a live handle.
enum JsegStatus jseg_segmenter_new(const struct JsegParams *params,
                                   const double *image,
                                   size_t width,
                                   size_t height,
                                   struct JsegSegmenter **out);

// # Safety
// As for [`jseg_params_free`].
void jseg_segmenter_free(struct JsegSegmenter *seg);

// Runs the alternating minimization from the label map `init`
// (`width * height` labels below the phase count).
//
// # Safety
// `seg` must be live and `init` must hold one label per pixel.
enum JsegStatus jseg_segmenter_run(const struct JsegSegmenter *seg,
                                   const uint16_t *init,
                                   struct JsegResult **out);

// # Safety
// As for [`jseg_params_free`].
void jseg_result_free(struct JsegResult *res);

// Raster width of a result, or 0 for null.
//
// # Safety
// `res` must be live or null.
size_t jseg_result_width(const struct JsegResult *res);

// Raster height of a result, or 0 for null.
//
// # Safety
// `res` must be live or null.
size_t jseg_result_height(const struct JsegResult *res);

// Number of outer iterations performed, or 0 for null.
//
// # Safety
// `res` must be live or null.
size_t jseg_result_outer_iterations(const struct JsegResult *res);

// Whether the partition stopped changing before `max_outer`.
//
// # Safety
// `res` must be live or null.
bool jseg_result_converged(const struct JsegResult *res);

// Copies the final label map into `labels` (`len` = pixel count).
//
// # Safety
// `labels` must have room for `len` values.
enum JsegStatus jseg_result_labels(const struct JsegResult *res, uint16_t *labels, size_t len);

// Copies the denoised image `g` (input units).
//
// # Safety
// `out` must have room for `len` values.
enum JsegStatus jseg_result_denoised(const struct JsegResult *res, double *out, size_t len);

// Copies the bias field `b`.
//
// # Safety
// `out` must have room for `len` values.
enum JsegStatus jseg_result_bias(const struct JsegResult *res, double *out, size_t len);

// Copies the region constants `c` (`len` = phase count).
//
// # Safety
// `out` must have room for `len` values.
enum JsegStatus jseg_result_constants(const struct JsegResult *res, double *out, size_t len);

// Denoising alone (`b ≡ 1`, no fitting term); writes `g` into `out`.
//
// # Safety
// `image` and `out` must each hold `width * height` values.
enum JsegStatus jseg_denoise(const struct JsegParams *params,
                             const double *image,
                             size_t width,
                             size_t height,
                             double *out);

// One-vs-rest scores of `phase` in `pred` against `truth`, both label maps
// with `n_phases` phases over `len` pixels. Labels are compared as given,
// without relabelling.
//
// # Safety
// `pred` and `truth` must hold `len` labels; `out` must be valid.
enum JsegStatus jseg_metrics(const uint16_t *pred,
                             const uint16_t *truth,
                             size_t len,
                             size_t n_phases,
                             size_t phase,
                             struct JsegMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JOINTSEG_H */
