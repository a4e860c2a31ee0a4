/*
 * C interface to the ftsx functional time series library.
 *
 * Handles returned through `out` parameters own their memory and must be
 * released with the matching `*_free` function. Functions returning
 * `FtsxStatus` report failure details through `ftsx_last_error_message`.
 */

#ifndef FTSX_H
#define FTSX_H

/* Generated from the ftsx-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call: zero on success, a failure class otherwise.
 */
typedef enum FtsxStatus {
  /**
   * The call succeeded.
   */
  FTSX_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FTSX_STATUS_NULL_ARGUMENT = 1,
  /**
   * Input data could not be read or parsed.
   */
  FTSX_STATUS_INPUT_ERROR = 2,
  /**
   * Arguments or data shapes violate a precondition.
   */
  FTSX_STATUS_PRECONDITION_ERROR = 3,
  /**
   * A numeric step failed to produce a finite result.
   */
  FTSX_STATUS_NUMERIC_ERROR = 4,
} FtsxStatus;

/**
 * Covariance estimator behind the feature extraction.
 */
typedef enum FtsxMode {
  /**
   * Long-run covariance, aggregating autocovariances across lags.
   */
  FTSX_MODE_DYNAMIC = 0,
  /**
   * Plain sample covariance of the observed curves.
   */
  FTSX_MODE_STATIC = 1,
} FtsxMode;

/**
 * Extracted features: mean, leading eigenstructure with scores, and the
 * thresholded residual coefficients.
 */
typedef struct FtsxFeatures FtsxFeatures;

/**
 * Point forecasts, optionally with calibrated prediction intervals.
 */
typedef struct FtsxForecast FtsxForecast;

/**
 * A collection of curves observed on a common grid.
 */
typedef struct FtsxSeries FtsxSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static UTF-8 string; never null.
 */
const char *ftsx_version(void);

/**
 * Message for the most recent failure on this thread, or null if none has
 * occurred. The pointer stays valid until the next failing call on the
 * same thread.
 */
const char *ftsx_last_error_message(void);

/**
 * Creates a series from `t_len` curves of `n_points` values each, row
 * major, observed at strictly increasing abscissae. Abscissae already
 * inside [0, 1] are used verbatim; anything else is mapped affinely onto
 * [0, 1], with the originals kept for output.
 *
 * # Safety
 * `abscissae` must point to `n_points` doubles, `values` to
 * `t_len * n_points` doubles, and `out` must be a valid destination.
 */
enum FtsxStatus ftsx_series_new(const double *abscissae,
                                size_t n_points,
                                const double *values,
                                size_t t_len,
                                struct FtsxSeries **out);

/**
 * Reads a series from a curve CSV (header = abscissae, one row per curve).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid destination.
 */
enum FtsxStatus ftsx_series_read_csv(const char *path, struct FtsxSeries **out);

/**
 * Writes the series back to a curve CSV at full precision.
 *
 * # Safety
 * `series` must be a live handle and `path` a NUL-terminated string.
 */
enum FtsxStatus ftsx_series_write_csv(const struct FtsxSeries *series, const char *path);

/**
 * Number of curves in the series; zero for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t ftsx_series_t_len(const struct FtsxSeries *series);

/**
 * Number of grid points per curve; zero for a null handle.
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t ftsx_series_grid_len(const struct FtsxSeries *series);

/**
 * Copies all curve values, row major, into `out` (capacity counted in
 * doubles and checked against `t_len * grid_len`).
 *
 * # Safety
 * `series` must be a live handle and `out` must point to `capacity`
 * writable doubles.
 */
enum FtsxStatus ftsx_series_values(const struct FtsxSeries *series, double *out, size_t capacity);

/**
 * Copies the original abscissae into `out` (capacity counted in doubles).
 *
 * # Safety
 * `series` must be a live handle and `out` must point to `capacity`
 * writable doubles.
 */
enum FtsxStatus ftsx_series_abscissae(const struct FtsxSeries *series,
                                      double *out,
                                      size_t capacity);

/**
 * Releases a series handle. Null is ignored.
 *
 * # Safety
 * `series` must be null or an owned handle not freed before.
 */
void ftsx_series_free(struct FtsxSeries *series);

/**
 * Extracts features from a series: dimension-selected eigenstructure with
 * scores plus block-thresholded residual coefficients at coarsest level
 * `j0` (the command-line default is 3).
 *
 * # Safety
 * `series` must be a live handle and `out` a valid destination.
 */
enum FtsxStatus ftsx_extract(const struct FtsxSeries *series,
                             enum FtsxMode mode,
                             uint32_t j0,
                             struct FtsxFeatures **out);

/**
 * Selected dimension of the feature set; zero for a null handle.
 *
 * # Safety
 * `features` must be null or a live handle.
 */
size_t ftsx_features_k(const struct FtsxFeatures *features);

/**
 * Covariance mode the features were extracted under.
 *
 * # Safety
 * `features` must be null (treated as dynamic) or a live handle.
 */
enum FtsxMode ftsx_features_mode(const struct FtsxFeatures *features);

/**
 * Fraction of residual coefficients zeroed by thresholding; NaN for a null
 * handle.
 *
 * # Safety
 * `features` must be null or a live handle.
 */
double ftsx_features_sparsity(const struct FtsxFeatures *features);

/**
 * Long-run covariance bandwidth chosen during extraction; NaN for a null
 * handle or for static-mode features, which carry none.
 *
 * # Safety
 * `features` must be null or a live handle.
 */
double ftsx_features_bandwidth(const struct FtsxFeatures *features);

/**
 * Copies the retained eigenvalues into `out`; their count equals the
 * selected dimension.
 *
 * # Safety
 * `features` must be a live handle and `out` must point to `capacity`
 * writable doubles.
 */
enum FtsxStatus ftsx_features_eigenvalues(const struct FtsxFeatures *features,
                                          double *out,
                                          size_t capacity);

/**
 * Saves the feature set to a JSON document.
 *
 * # Safety
 * `features` must be a live handle and `path` a NUL-terminated string.
 */
enum FtsxStatus ftsx_features_save(const struct FtsxFeatures *features, const char *path);

/**
 * Loads a feature set previously written by `ftsx_features_save` or the
 * command-line tool.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid destination.
 */
enum FtsxStatus ftsx_features_load(const char *path, struct FtsxFeatures **out);

/**
 * Releases a feature handle. Null is ignored.
 *
 * # Safety
 * `features` must be null or an owned handle not freed before.
 */
void ftsx_features_free(struct FtsxFeatures *features);

/**
 * Forecasts `horizon` steps ahead from a feature set. With `coverage` in
 * (0, 1) the result also carries prediction intervals calibrated against
 * `series`, the data the features were extracted from; with `coverage` at
 * or below zero the forecast is point-only and `series` may be null.
 *
 * # Safety
 * `features` must be a live handle, `series` null or a live handle as
 * described, and `out` a valid destination.
 */
enum FtsxStatus ftsx_forecast(const struct FtsxFeatures *features,
                              const struct FtsxSeries *series,
                              size_t horizon,
                              double coverage,
                              struct FtsxForecast **out);

/**
 * Number of forecast steps; zero for a null handle.
 *
 * # Safety
 * `forecast` must be null or a live handle.
 */
size_t ftsx_forecast_horizon(const struct FtsxForecast *forecast);

/**
 * Number of grid points per forecast curve; zero for a null handle.
 *
 * # Safety
 * `forecast` must be null or a live handle.
 */
size_t ftsx_forecast_grid_len(const struct FtsxForecast *forecast);

/**
 * Copies the point forecast for one step (0-based, ahead of the sample
 * end) into `out`.
 *
 * # Safety
 * `forecast` must be a live handle and `out` must point to `capacity`
 * writable doubles.
 */
enum FtsxStatus ftsx_forecast_point(const struct FtsxForecast *forecast,
                                    size_t step,
                                    double *out,
                                    size_t capacity);

/**
 * Copies the interval bounds for one step into `lower` and `upper`. Fails
 * with a precondition error on a point-only forecast.
 *
 * # Safety
 * `forecast` must be a live handle; `lower` and `upper` must each point to
 * `capacity` writable doubles.
 */
enum FtsxStatus ftsx_forecast_interval(const struct FtsxForecast *forecast,
                                       size_t step,
                                       double *lower,
                                       double *upper,
                                       size_t capacity);

/**
 * Releases a forecast handle. Null is ignored.
 *
 * # Safety
 * `forecast` must be null or an owned handle not freed before.
 */
void ftsx_forecast_free(struct FtsxForecast *forecast);

/**
 * Smooths every curve by penalized least squares, selecting one shared
 * penalty from the given candidate grid, and returns the smoothed series
 * as a new handle on the same abscissae.
 *
 * # Safety
 * `series` must be a live handle, `lambda_grid` must point to `grid_len`
 * doubles, and `out` must be a valid destination.
 */
enum FtsxStatus ftsx_smooth(const struct FtsxSeries *series,
                            const double *lambda_grid,
                            size_t grid_len,
                            struct FtsxSeries **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FTSX_H */
