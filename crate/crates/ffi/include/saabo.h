#ifndef SAABO_H
#define SAABO_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaaboStatus {
  SAABO_STATUS_OK = 0,
  SAABO_STATUS_NULL_POINTER = 1,
  SAABO_STATUS_INVALID_ARGUMENT = 2,
  SAABO_STATUS_CONFIG = 3,
  SAABO_STATUS_NUMERICAL = 4,
  SAABO_STATUS_OPTIMIZATION = 5,
  SAABO_STATUS_IO = 6,
  SAABO_STATUS_PANIC = 7,
} SaaboStatus;

/**
 * Fitted GP model.
 */
typedef struct SaaboModel SaaboModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next saabo call on the same thread.
 */
const char *saabo_last_error_message(void);

/**
 * Fits a GP by maximum likelihood to row-major `x` (n by d) and `y` (n).
 *
 * # Safety
 * `x` must hold `n * d` doubles, `y` must hold `n`, `out` must be writable.
 */
enum SaaboStatus saabo_model_fit(const double *x,
                                 const double *y,
                                 size_t n,
                                 size_t d,
                                 uint64_t seed,
                                 struct SaaboModel **out);

/**
 * Loads a model document written by `saabo fit`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum SaaboStatus saabo_model_from_json(const char *json, struct SaaboModel **out);

/**
 * Serializes the model; free the string with [`saabo_string_free`].
 *
 * # Safety
 * `model` must come from this library and `out` must be writable.
 */
enum SaaboStatus saabo_model_to_json(const struct SaaboModel *model, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void saabo_string_free(char *s);

/**
 * Input dimension of the model, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
size_t saabo_model_dim(const struct SaaboModel *model);

/**
 * Replaces the search box used by [`saabo_suggest`].
 *
 * # Safety
 * `lower` and `upper` must hold `d` doubles each.
 */
enum SaaboStatus saabo_model_set_bounds(struct SaaboModel *model,
                                        const double *lower,
                                        const double *upper,
                                        size_t d);

/**
 * Posterior mean and variance of the latent function at `n` row-major points.
 *
 * # Safety
 * `x` must hold `n * d` doubles; `mean` and `var` must hold `n` each.
 */
enum SaaboStatus saabo_model_posterior(const struct SaaboModel *model,
                                       const double *x,
                                       size_t n,
                                       double *mean,
                                       double *var);

/**
 * Maximizes the named acquisition over `q` points and writes them row-major
 * into `x_out` (`q * d` doubles). `value_out` may be NULL.
 *
 * # Safety
 * `acqf` must be NUL-terminated, `x_out` must hold `q * d` doubles.
 */
enum SaaboStatus saabo_suggest(const struct SaaboModel *model,
                               const char *acqf,
                               size_t q,
                               uint64_t seed,
                               double *x_out,
                               double *value_out);

/**
 * # Safety
 * `model` must be NULL or a handle from this library not yet freed.
 */
void saabo_model_free(struct SaaboModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAABO_H */
