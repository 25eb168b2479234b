#ifndef SQBC_H
#define SQBC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SqbcStatus {
  SQBC_STATUS_OK = 0,
  SQBC_STATUS_NULL_POINTER = 1,
  SQBC_STATUS_INVALID_ARGUMENT = 2,
  SQBC_STATUS_INVALID_QUERY = 3,
  SQBC_STATUS_NUMERIC = 4,
  SQBC_STATUS_EMPTY_VERSION_SPACE = 5,
  SQBC_STATUS_PANIC = 6,
  SQBC_STATUS_OTHER = 7,
} SqbcStatus;

/**
 * Dual-form Gaussian posterior over a kernel predictor.
 */
typedef struct SqbcKernelPosterior SqbcKernelPosterior;

/**
 * Weighted committee of labelings of a fixed pool.
 */
typedef struct SqbcLabelPosterior SqbcLabelPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (nul-terminated,
 * truncated to `len`). Returns the full message length without the nul, or 0
 * when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sqbc_last_error(char *buf, size_t len);

/**
 * Library version as a static nul-terminated string.
 */
const char *sqbc_version(void);

/**
 * Creates a uniform posterior over `n_structures` labelings. `labels` is
 * row-major: row `s` holds the `n_items` labels of structure `s`.
 *
 * # Safety
 * `labels` must point to `n_structures * n_items` values; `out` must be valid.
 */
enum SqbcStatus sqbc_label_posterior_new(const int64_t *labels,
                                         size_t n_structures,
                                         size_t n_items,
                                         struct SqbcLabelPosterior **out_handle);

/**
 * # Safety
 * `handle` must come from `sqbc_label_posterior_new` and not be used again.
 */
void sqbc_label_posterior_free(struct SqbcLabelPosterior *handle);

/**
 * Multiplies each weight by `exp(-beta)` when the structure disagrees with
 * `label` on `item`, then renormalises.
 *
 * # Safety
 * `handle` must be a live posterior.
 */
enum SqbcStatus sqbc_label_posterior_update(struct SqbcLabelPosterior *handle,
                                            size_t item,
                                            int64_t label,
                                            double beta);

/**
 * # Safety
 * `handle` must be a live posterior and `out_len` valid.
 */
enum SqbcStatus sqbc_label_posterior_len(const struct SqbcLabelPosterior *handle, size_t *out_len);

/**
 * Writes the normalised weights into `weights` (`len` must equal the
 * number of structures).
 *
 * # Safety
 * `weights` must point to `len` writable values.
 */
enum SqbcStatus sqbc_label_posterior_weights(const struct SqbcLabelPosterior *handle,
                                             double *weights,
                                             size_t len);

/**
 * Uncertainty `1 - sum_y p(y)^2` of the label of `item`.
 *
 * # Safety
 * `handle` must be a live posterior and `out_value` valid.
 */
enum SqbcStatus sqbc_label_posterior_uncertainty(const struct SqbcLabelPosterior *handle,
                                                 size_t item,
                                                 double *out_value);

/**
 * Shrinkage `1 - max_y p(y)` of the label of `item`.
 *
 * # Safety
 * `handle` must be a live posterior and `out_value` valid.
 */
enum SqbcStatus sqbc_label_posterior_shrinkage(const struct SqbcLabelPosterior *handle,
                                               size_t item,
                                               double *out_value);

/**
 * Creates a kernel posterior. `gamma <= 0` selects the linear kernel,
 * otherwise `exp(-gamma |x - y|^2)`. `seed` drives [`sqbc_kernel_sample`].
 *
 * # Safety
 * `out_handle` must be valid.
 */
enum SqbcStatus sqbc_kernel_new(double gamma,
                                double beta,
                                double sigma0_sq,
                                uint64_t seed,
                                struct SqbcKernelPosterior **out_handle);

/**
 * # Safety
 * `handle` must come from `sqbc_kernel_new` and not be used again.
 */
void sqbc_kernel_free(struct SqbcKernelPosterior *handle);

/**
 * Adds the observation `(x, y)`.
 *
 * # Safety
 * `x` must point to `dim` values.
 */
enum SqbcStatus sqbc_kernel_update(struct SqbcKernelPosterior *handle,
                                   const double *x,
                                   size_t dim,
                                   double y);

/**
 * # Safety
 * `handle` must be live and `out_len` valid.
 */
enum SqbcStatus sqbc_kernel_len(const struct SqbcKernelPosterior *handle, size_t *out_len);

/**
 * Predictive mean and variance at `x`.
 *
 * # Safety
 * `x` must point to `dim` values; the out pointers must be valid.
 */
enum SqbcStatus sqbc_kernel_predict(const struct SqbcKernelPosterior *handle,
                                    const double *x,
                                    size_t dim,
                                    double *out_mean,
                                    double *out_var);

/**
 * Draws one prediction at `x` from the posterior.
 *
 * # Safety
 * `x` must point to `dim` values; `out_value` must be valid.
 */
enum SqbcStatus sqbc_kernel_sample(struct SqbcKernelPosterior *handle,
                                   const double *x,
                                   size_t dim,
                                   double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SQBC_H */
