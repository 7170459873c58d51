#ifndef CONEBOOT_H
#define CONEBOOT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Mask pipeline depth.
 */
typedef enum CbMaskKind {
  CB_MASK_KIND_THRESHOLD = 0,
  CB_MASK_KIND_FILLED_THRESHOLD = 1,
  CB_MASK_KIND_HULL = 2,
} CbMaskKind;

/**
 * Result of every fallible call.
 */
typedef enum CbStatus {
  CB_STATUS_OK = 0,
  CB_STATUS_NULL_POINTER = 1,
  CB_STATUS_INVALID_ARGUMENT = 2,
  CB_STATUS_IO = 3,
  CB_STATUS_MALFORMED = 4,
  CB_STATUS_DIMENSION_MISMATCH = 5,
  CB_STATUS_PANIC = 6,
  CB_STATUS_OTHER = 7,
} CbStatus;

/**
 * Binary mask (opaque).
 */
typedef struct CbMask CbMask;

/**
 * Trained segmentation network (opaque).
 */
typedef struct CbModel CbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a
 * success. Valid until the next coneboot call on the same thread.
 */
const char *cb_last_error(void);

/**
 * NUL-terminated crate version.
 */
const char *cb_version(void);

/**
 * Builds a CV mask from `n_frames` 8-bit frames of `width × height`,
 * stored back to back row-major.
 *
 * # Safety
 * `frames` must point to `n_frames * width * height` bytes; `out` must be
 * a valid pointer. The returned mask is released with [`cb_mask_free`].
 */
enum CbStatus cb_mask_generate(const uint8_t *frames,
                               size_t n_frames,
                               size_t width,
                               size_t height,
                               enum CbMaskKind kind,
                               size_t block,
                               double offset,
                               struct CbMask **out);

/**
 * Wraps `width × height` bytes (nonzero = foreground) as a mask.
 *
 * # Safety
 * `bytes` must point to `width * height` bytes; `out` must be valid.
 */
enum CbStatus cb_mask_from_bytes(const uint8_t *bytes,
                                 size_t width,
                                 size_t height,
                                 struct CbMask **out);

/**
 * # Safety
 * `mask` must be null or a handle from this library, not yet freed.
 */
void cb_mask_free(struct CbMask *mask);

/**
 * # Safety
 * `mask` must be a live handle; `width` and `height` valid pointers.
 */
enum CbStatus cb_mask_dims(const struct CbMask *mask, size_t *width, size_t *height);

/**
 * Copies the mask as 0/255 bytes into `out` (`len` must equal
 * width × height).
 *
 * # Safety
 * `mask` must be a live handle and `out` writable for `len` bytes.
 */
enum CbStatus cb_mask_copy(const struct CbMask *mask, uint8_t *out, size_t len);

/**
 * (TP + TN) / pixels of `pred` against `truth` (same size).
 *
 * # Safety
 * Both handles must be live; `accuracy` must be valid.
 */
enum CbStatus cb_pixel_accuracy(const struct CbMask *pred,
                                const struct CbMask *truth,
                                double *accuracy);

/**
 * Loads weights written by `coneboot train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum CbStatus cb_model_load(const char *path, struct CbModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void cb_model_free(struct CbModel *model);

/**
 * Network input edge length in pixels.
 *
 * # Safety
 * `model` must be a live handle; `size` valid.
 */
enum CbStatus cb_model_input_size(const struct CbModel *model, size_t *size);

/**
 * Cone mask for one 8-bit frame, at the frame's resolution.
 *
 * # Safety
 * `frame` must point to `width * height` bytes; handles must be valid.
 */
enum CbStatus cb_model_predict(const struct CbModel *model,
                               const uint8_t *frame,
                               size_t width,
                               size_t height,
                               struct CbMask **out);

/**
 * De-identifies one 8-bit frame: pixels outside the predicted cone are
 * zeroed into `out` (`width * height` bytes; may equal `frame`).
 *
 * # Safety
 * `frame` readable and `out` writable for `width * height` bytes.
 */
enum CbStatus cb_deid_frame(const struct CbModel *model,
                            const uint8_t *frame,
                            size_t width,
                            size_t height,
                            uint8_t *out);

/**
 * Two-sided pooled Student t-test.
 *
 * # Safety
 * `a` and `b` readable for `na` / `nb` doubles; `t` and `p` valid.
 */
enum CbStatus cb_t_test(const double *a,
                        size_t na,
                        const double *b,
                        size_t nb,
                        double *t,
                        double *p);

/**
 * Holm–Bonferroni: ascending thresholds into `thresholds` and per-input
 * flags (1 = significant) into `significant`, both of length `m`.
 *
 * # Safety
 * `p_values` readable, `thresholds` and `significant` writable, for `m`
 * elements each.
 */
enum CbStatus cb_holm_bonferroni(const double *p_values,
                                 size_t m,
                                 double alpha,
                                 double *thresholds,
                                 uint8_t *significant);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONEBOOT_H */
