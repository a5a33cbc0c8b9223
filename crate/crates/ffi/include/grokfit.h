#ifndef GROKFIT_H
#define GROKFIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_POINTER = 1,
  GF_STATUS_INVALID_ARGUMENT = 2,
  GF_STATUS_FIT_DEGENERATE = 3,
  GF_STATUS_INSUFFICIENT_TRANSITION = 4,
  GF_STATUS_NUMERIC_FAILURE = 5,
  GF_STATUS_PANIC = 6,
} GfStatus;

typedef enum GfCurveKind {
  GF_CURVE_KIND_TRAIN = 0,
  GF_CURVE_KIND_VALIDATION = 1,
} GfCurveKind;

/**
 * Opaque accuracy curve.
 */
typedef struct GfCurve GfCurve;

/**
 * Opaque linear-model run: both curves plus their measures.
 */
typedef struct GfLinearRun GfLinearRun;

/**
 * Parameters of `a·erf(s·(t − t_star) + theta) + b`.
 */
typedef struct GfErfFit {
  double s;
  double t_star;
  double a;
  double b;
  double theta;
  double rmse_window;
  size_t n_window_points;
} GfErfFit;

typedef struct GfMetrics {
  double m;
  double r_rel;
  double r_abs;
  struct GfErfFit fit_train;
  struct GfErfFit fit_gen;
} GfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len − 1` bytes) and returns the full message length, or 0
 * when there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t gf_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gf_version(void);

/**
 * Builds a curve from `len` epochs and accuracies (copied).
 *
 * # Safety
 * `epochs` and `values` must be valid for `len` reads; `out` must be valid
 * for one write. Free the result with [`gf_curve_free`].
 */
enum GfStatus gf_curve_new(const double *epochs,
                           const double *values,
                           size_t len,
                           enum GfCurveKind kind,
                           struct GfCurve **out);

/**
 * # Safety
 * `curve` must be null or a pointer from this library not yet freed.
 */
void gf_curve_free(struct GfCurve *curve);

/**
 * Number of samples, 0 for a null handle.
 *
 * # Safety
 * `curve` must be null or a live handle.
 */
size_t gf_curve_len(const struct GfCurve *curve);

/**
 * Copies up to `cap` samples into `epochs` and `values` (either may be null).
 *
 * # Safety
 * `curve` must be a live handle; non-null outputs must be valid for `cap`
 * writes.
 */
enum GfStatus gf_curve_copy(const struct GfCurve *curve,
                            double *epochs,
                            double *values,
                            size_t cap);

/**
 * Fits the curve on the accuracy range `[baseline, max_accuracy]`.
 *
 * # Safety
 * `curve` must be a live handle and `out` valid for one write.
 */
enum GfStatus gf_fit_erf(const struct GfCurve *curve,
                         double baseline,
                         double max_accuracy,
                         struct GfErfFit *out);

/**
 * Grokking measures from a training and a validation fit.
 *
 * # Safety
 * All pointers must be valid; `out` for one write.
 */
enum GfStatus gf_metrics_from_fits(const struct GfErfFit *fit_train,
                                   const struct GfErfFit *fit_gen,
                                   struct GfMetrics *out);

/**
 * Analytic linear-model curves and their fits for one λ.
 *
 * # Safety
 * `out` must be valid for one write. Free the result with
 * [`gf_linear_run_free`].
 */
enum GfStatus gf_linear_run(double lambda,
                            double eta0,
                            double epsilon,
                            size_t grid_points,
                            struct GfLinearRun **out);

/**
 * # Safety
 * `run` must be null or a handle from [`gf_linear_run`] not yet freed.
 */
void gf_linear_run_free(struct GfLinearRun *run);

/**
 * # Safety
 * `run` must be a live handle and `out` valid for one write.
 */
enum GfStatus gf_linear_run_metrics(const struct GfLinearRun *run, struct GfMetrics *out);

/**
 * Copies one of the run's curves into a new handle owned by the caller.
 *
 * # Safety
 * `run` must be a live handle and `out` valid for one write.
 */
enum GfStatus gf_linear_run_curve(const struct GfLinearRun *run,
                                  enum GfCurveKind kind,
                                  struct GfCurve **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROKFIT_H */
