#ifndef GLANN_H
#define GLANN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GlannStatus {
  GLANN_STATUS_OK = 0,
  /**
   * Bad argument, null pointer, or buffer of the wrong size.
   */
  GLANN_STATUS_ARGUMENT = 1,
  /**
   * Unreadable, corrupt or incompatible file.
   */
  GLANN_STATUS_FORMAT = 2,
  /**
   * Numeric failure such as a non-finite loss or an indefinite matrix.
   */
  GLANN_STATUS_NUMERIC = 3,
  /**
   * Operation not valid for this object.
   */
  GLANN_STATUS_STATE = 4,
  /**
   * A panic was caught at the boundary.
   */
  GLANN_STATUS_PANIC = 5,
} GlannStatus;

/**
 * A loaded generator and mapper.
 */
typedef struct GlannModel GlannModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *glann_last_error(void);

/**
 * Load a checkpoint that contains a mapper. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum GlannStatus glann_model_load(const char *path, struct GlannModel **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`glann_model_load`] and not be used afterwards.
 */
void glann_model_free(struct GlannModel *model);

/**
 * Image shape and noise dimension of a model. Any output pointer may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum GlannStatus glann_model_image_shape(const struct GlannModel *model,
                                         size_t *channels,
                                         size_t *height,
                                         size_t *width,
                                         size_t *noise_dim);

/**
 * Draw `n` images with noise seeded by `seed`. `out` receives
 * `n * channels * height * width` values in NCHW order, in [-1, 1].
 *
 * # Safety
 * `model` must be a live handle and `out` valid for `out_len` doubles.
 */
enum GlannStatus glann_model_sample(const struct GlannModel *model,
                                    size_t n,
                                    uint64_t seed,
                                    double *out,
                                    size_t out_len);

/**
 * Decode `n` noise rows (row-major, `n * noise_dim` values) to images.
 *
 * # Safety
 * `model` must be a live handle, `noise` valid for `n * noise_dim` doubles and
 * `out` for `out_len` doubles.
 */
enum GlannStatus glann_model_decode_noise(const struct GlannModel *model,
                                          const double *noise,
                                          size_t n,
                                          double *out,
                                          size_t out_len);

/**
 * FID between two row-major feature matrices of width `dim`.
 *
 * # Safety
 * `real` and `gen` must be valid for `n_real * dim` and `n_gen * dim`
 * doubles; `out` must be writable.
 */
enum GlannStatus glann_fid_from_features(const double *real,
                                         size_t n_real,
                                         const double *gen,
                                         size_t n_gen,
                                         size_t dim,
                                         double *out);

/**
 * Precision/recall curve between two equally sized feature sets. `precision`
 * and `recall` receive `angles` values each; `f8` and `f1_8` may be null.
 *
 * # Safety
 * `real` and `gen` must be valid for `n * dim` doubles, `precision` and
 * `recall` for `angles` doubles; non-null scalar outputs must be writable.
 */
enum GlannStatus glann_prd_from_features(const double *real,
                                         const double *gen,
                                         size_t n,
                                         size_t dim,
                                         size_t bins,
                                         size_t angles,
                                         uint64_t seed,
                                         double *precision,
                                         double *recall,
                                         double *f8,
                                         double *f1_8);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLANN_H */
