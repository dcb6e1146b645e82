#ifndef FORECAST_SDE_H
#define FORECAST_SDE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsdeStatus {
  FSDE_STATUS_OK = 0,
  FSDE_STATUS_NULL_POINTER = 1,
  FSDE_STATUS_INVALID_ARGUMENT = 2,
  FSDE_STATUS_DOMAIN = 3,
  FSDE_STATUS_DATA = 4,
  FSDE_STATUS_NUMERICAL = 5,
  FSDE_STATUS_IO = 6,
  FSDE_STATUS_PANIC = 7,
} FsdeStatus;

/**
 * Piecewise-linear forecast curve on a time axis in days.
 */
typedef struct FsdeCurve FsdeCurve;

/**
 * Prepared calibration data.
 */
typedef struct FsdeDataset FsdeDataset;

/**
 * Model parameters.
 */
typedef struct FsdeParams FsdeParams;

/**
 * Summary of a calibration.
 */
typedef struct FsdeFit {
  double theta0;
  double alpha;
  /**
   * NaN unless the method also fits the lag.
   */
  double delta;
  double product;
  double loglik;
  double aic;
  double bic;
  size_t n;
  bool converged;
} FsdeFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *fsde_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fsde_version(void);

/**
 * Create parameters for model 1 (plain) or 2 (derivative tracking).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FsdeStatus fsde_params_new(double theta0,
                                double alpha,
                                uint32_t model,
                                struct FsdeParams **out);

/**
 * # Safety
 * `params` must come from [`fsde_params_new`] and not be used afterwards.
 */
void fsde_params_free(struct FsdeParams *params);

/**
 * # Safety
 * Pointers must be valid.
 */
enum FsdeStatus fsde_lamperti_forward(const struct FsdeParams *params,
                                      double v,
                                      double p,
                                      double *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum FsdeStatus fsde_lamperti_inverse(const struct FsdeParams *params,
                                      double z,
                                      double p,
                                      double *out);

/**
 * Lamperti-space drift at `z` for forecast value `p` and slope `p_dot`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FsdeStatus fsde_drift_z(const struct FsdeParams *params,
                             double z,
                             double p,
                             double p_dot,
                             double *out);

/**
 * Build a forecast curve from `n` knots; values are truncated to `[epsilon, 1 - epsilon]`.
 *
 * # Safety
 * `times` and `values` must hold `n` doubles; `out` must be valid.
 */
enum FsdeStatus fsde_curve_new(const double *times,
                               const double *values,
                               size_t n,
                               double epsilon,
                               struct FsdeCurve **out);

/**
 * # Safety
 * `curve` must come from [`fsde_curve_new`] and not be used afterwards.
 */
void fsde_curve_free(struct FsdeCurve *curve);

/**
 * First two raw moments of the forecast error at `t1`, starting from `v0` at `t0`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FsdeStatus fsde_error_moments(const struct FsdeParams *params,
                                   const struct FsdeCurve *curve,
                                   double v0,
                                   double t0,
                                   double t1,
                                   double *out_m1,
                                   double *out_m2);

/**
 * Log density at `v` of the Beta law matching `mean` and `variance` on
 * `[-(1 - epsilon), 1 - epsilon]`.
 *
 * # Safety
 * `out` must be valid.
 */
enum FsdeStatus fsde_beta_logpdf(double v,
                                 double mean,
                                 double variance,
                                 double epsilon,
                                 double *out);

/**
 * Load every uncurtailed segment of a segments JSON file written by `forecast-sde ingest`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum FsdeStatus fsde_dataset_load(const char *path, double epsilon, struct FsdeDataset **out);

/**
 * # Safety
 * `data` must come from [`fsde_dataset_load`] and not be used afterwards.
 */
void fsde_dataset_free(struct FsdeDataset *data);

/**
 * Calibrate `model` on `data`. `method` is one of `v_beta`, `v_gauss`,
 * `z_fixed_point` or `complete`.
 *
 * # Safety
 * Pointers must be valid; `method` NUL-terminated.
 */
enum FsdeStatus fsde_calibrate(const struct FsdeDataset *data,
                               uint32_t model,
                               const char *method,
                               struct FsdeFit *out);

/**
 * Simulate `n_paths` paths of the normalized state on `grid`, all starting
 * at forecast error `v0`. `out` receives `n_paths * n_grid` values, path-major.
 *
 * # Safety
 * `grid` must hold `n_grid` doubles and `out` room for `n_paths * n_grid`.
 */
enum FsdeStatus fsde_simulate(const struct FsdeParams *params,
                              const struct FsdeCurve *curve,
                              const double *grid,
                              size_t n_grid,
                              size_t n_paths,
                              uint64_t seed,
                              double v0,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FORECAST_SDE_H */
