#ifndef CATE_EBM_H
#define CATE_EBM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CateEbmStatus {
  CATE_EBM_STATUS_OK = 0,
  CATE_EBM_STATUS_NULL_POINTER = 1,
  CATE_EBM_STATUS_INVALID_ARGUMENT = 2,
  CATE_EBM_STATUS_IO = 3,
  CATE_EBM_STATUS_FORMAT = 4,
  CATE_EBM_STATUS_NUMERIC = 5,
  CATE_EBM_STATUS_PANIC = 6,
} CateEbmStatus;

/**
 * Opaque trained model.
 */
typedef struct CateEbmModel CateEbmModel;

/**
 * Training settings. `hidden` may be null, which selects three layers of
 * width 20.
 */
typedef struct CateEbmTrainParams {
  size_t k;
  size_t b;
  double rho;
  size_t epochs;
  size_t batch_size;
  double lr;
  uint64_t seed;
  uint64_t b_seed;
  size_t patience;
  double val_fraction;
  const size_t *hidden;
  size_t n_hidden;
} CateEbmTrainParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *cate_ebm_last_error_message(void);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum CateEbmStatus cate_ebm_model_load(const char *path, struct CateEbmModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be nul-terminated.
 */
enum CateEbmStatus cate_ebm_model_save(const struct CateEbmModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void cate_ebm_model_free(struct CateEbmModel *model);

/**
 * # Safety
 * All pointers must be valid.
 */
enum CateEbmStatus cate_ebm_model_dims(const struct CateEbmModel *model,
                                       size_t *input_dim,
                                       size_t *k);

/**
 * Standardized representations of `n` rows of width `d` into `out`
 * (`n × k`).
 *
 * # Safety
 * `x` holds `n * d` values and `out` has room for `n * k`.
 */
enum CateEbmStatus cate_ebm_model_represent(const struct CateEbmModel *model,
                                            const double *x,
                                            size_t n,
                                            size_t d,
                                            double *out);

/**
 * Energy of one row under subset `j`.
 *
 * # Safety
 * `x` holds `d` values; `out` is valid.
 */
enum CateEbmStatus cate_ebm_model_energy(const struct CateEbmModel *model,
                                         const double *x,
                                         size_t d,
                                         size_t j,
                                         double *out);

/**
 * Fills `params` with the library defaults.
 *
 * # Safety
 * `params` must be valid.
 */
enum CateEbmStatus cate_ebm_train_params_default(struct CateEbmTrainParams *params);

/**
 * Trains a model on `n × d` covariates.
 *
 * # Safety
 * `x` holds `n * d` values; `params` and `out` are valid; `params.hidden`
 * is null or holds `params.n_hidden` widths.
 */
enum CateEbmStatus cate_ebm_train(const double *x,
                                  size_t n,
                                  size_t d,
                                  const struct CateEbmTrainParams *params,
                                  struct CateEbmModel **out);

/**
 * Mean squared difference between two effect vectors of length `n`.
 *
 * # Safety
 * Both inputs hold `n` values; `out` is valid.
 */
enum CateEbmStatus cate_ebm_pehe(const double *tau_hat, const double *tau, size_t n, double *out);

/**
 * Per-dimension correlation of two `n × k` representations, averaged.
 *
 * # Safety
 * Both inputs hold `n * k` values; `out` is valid.
 */
enum CateEbmStatus cate_ebm_mcc(const double *r1,
                                const double *r2,
                                size_t n,
                                size_t k,
                                double *out);

/**
 * Seeded `k × k` orthogonal matrix into `out`.
 *
 * # Safety
 * `out` has room for `k * k` values.
 */
enum CateEbmStatus cate_ebm_random_orthogonal(size_t k, uint64_t seed, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CATE_EBM_H */
