#ifndef PBILEVEL_H
#define PBILEVEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * How a model's training run ended.
 */
typedef enum PbSolveStatus {
  PB_SOLVE_STATUS_CONVERGED = 0,
  PB_SOLVE_STATUS_MAX_ITER = 1,
  PB_SOLVE_STATUS_STALLED = 2,
} PbSolveStatus;

/**
 * Result code of every fallible call.
 */
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_ARGUMENT = 2,
  PB_STATUS_DIMENSION_MISMATCH = 3,
  PB_STATUS_EMPTY_DATA = 4,
  PB_STATUS_SINGULAR = 5,
  PB_STATUS_PARSE = 6,
  PB_STATUS_IO = 7,
  PB_STATUS_PANIC = 8,
} PbStatus;

/**
 * Binary feature matrix with labels.
 */
typedef struct PbDataset PbDataset;

/**
 * Trained weights plus the outcome of the run that produced them.
 */
typedef struct PbModel PbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pb_version(void);

/**
 * `(tanh(alpha (v - beta)) + 1) / 2`.
 */
double pb_smooth_step(double v, double alpha, double beta);

double pb_p4(uint64_t tp, uint64_t tn, uint64_t fp, uint64_t fn_);

double pb_f1(uint64_t tp, uint64_t tn, uint64_t fp, uint64_t fn_);

/**
 * Build a dataset from a row-major `n x q` 0/1 matrix and `n` labels.
 *
 * # Safety
 * `x` must point to `n * q` bytes, `y` to `n` bytes and `out` to writable
 * storage for one pointer.
 */
enum PbStatus pb_dataset_new(const uint8_t *x,
                             const uint8_t *y,
                             size_t n,
                             size_t q,
                             struct PbDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from [`pb_dataset_new`] not yet freed.
 */
void pb_dataset_free(struct PbDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle.
 */
size_t pb_dataset_rows(const struct PbDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle.
 */
size_t pb_dataset_cols(const struct PbDataset *ds);

/**
 * Regularised logistic regression on `ds`.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum PbStatus pb_train_baseline(const struct PbDataset *ds, double mu, struct PbModel **out);

/**
 * Solve the bilevel stationarity system for one configuration.
 *
 * The adversary generates `round(rho * class-1 rows)` rows of class 1 from
 * noise drawn with `seed`; the start point is `w = 0`, `alpha = alpha0`,
 * `beta` the class-1 feature rates of up to 200 sampled rows, and `zeta0`.
 * `max_iter = 0` keeps the default iteration limit.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum PbStatus pb_solve_bilevel(const struct PbDataset *ds,
                               double rho,
                               double mu,
                               double alpha0,
                               double zeta0,
                               uint64_t seed,
                               size_t max_iter,
                               struct PbModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pb_model_free(struct PbModel *model);

/**
 * Number of weights; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pb_model_len(const struct PbModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
enum PbSolveStatus pb_model_status(const struct PbModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t pb_model_iterations(const struct PbModel *model);

/**
 * Final squared residual (bilevel) or squared gradient norm (baseline).
 *
 * # Safety
 * `model` must be a live handle.
 */
double pb_model_residual_sq(const struct PbModel *model);

/**
 * Copy the weights into `out`, which must hold exactly `len` values.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` doubles.
 */
enum PbStatus pb_model_weights(const struct PbModel *model, double *out, size_t len);

/**
 * Predict 0/1 for every row of `ds` (1 iff the class-1 probability is at
 * least `threshold`).
 *
 * # Safety
 * Handles must be live and `out` must point to `len` bytes.
 */
enum PbStatus pb_model_predict(const struct PbModel *model,
                               const struct PbDataset *ds,
                               double threshold,
                               uint8_t *out,
                               size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PBILEVEL_H */
