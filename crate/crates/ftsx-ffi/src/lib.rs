//! C ABI for the functional time series pipeline: opaque handles over curve
//! collections, extracted feature sets, and forecasts, with status-code
//! errors and a thread-local message channel.
//!
//! Every constructor hands ownership to the caller, to be returned through
//! the matching `*_free` function. All entry points catch panics, so no
//! unwinding ever crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ftsx::core::FunctionalSeries;
use ftsx::error::FtsxError;
use ftsx::forecast::{calibrate_intervals, forecast_curves, ForecastBundle};
use ftsx::fpca::{extract_global, residuals, Mode};
use ftsx::io::{
    curves_from_buffer, read_curves, read_features, write_curves, write_features, CurveData,
    FeatureFile,
};
use ftsx::smooth::smooth_series;
use ftsx::wavelet::{build_nrsi, local_matrix, WaveletBasis};
use ndarray::Array2;

/// Outcome of a call: zero on success, a failure class otherwise.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtsxStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Input data could not be read or parsed.
    InputError = 2,
    /// Arguments or data shapes violate a precondition.
    PreconditionError = 3,
    /// A numeric step failed to produce a finite result.
    NumericError = 4,
}

/// Covariance estimator behind the feature extraction.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtsxMode {
    /// Long-run covariance, aggregating autocovariances across lags.
    Dynamic = 0,
    /// Plain sample covariance of the observed curves.
    Static = 1,
}

/// A collection of curves observed on a common grid.
pub struct FtsxSeries {
    data: CurveData,
}

/// Extracted features: mean, leading eigenstructure with scores, and the
/// thresholded residual coefficients.
pub struct FtsxFeatures {
    doc: FeatureFile,
}

/// Point forecasts, optionally with calibrated prediction intervals.
pub struct FtsxForecast {
    bundle: ForecastBundle,
    abscissae: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: FtsxStatus, message: &str) -> FtsxStatus {
    let stored = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
    status
}

fn fail_error(err: &FtsxError) -> FtsxStatus {
    let status = match err.exit_code() {
        2 => FtsxStatus::InputError,
        4 => FtsxStatus::NumericError,
        _ => FtsxStatus::PreconditionError,
    };
    fail(status, &err.to_string())
}

/// Runs a fallible body, translating errors and panics into statuses.
fn guarded(body: impl FnOnce() -> Result<(), FtsxError>) -> FtsxStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FtsxStatus::Ok,
        Ok(Err(err)) => fail_error(&err),
        Err(_) => fail(FtsxStatus::NumericError, "internal panic"),
    }
}

unsafe fn path_arg(raw: *const c_char) -> Result<PathBuf, FtsxError> {
    let bytes = CStr::from_ptr(raw).to_str().map_err(|_| {
        FtsxError::InvalidArgument("path is not valid UTF-8".to_string())
    })?;
    Ok(PathBuf::from(bytes))
}

fn copy_out(values: &[f64], out: *mut f64, capacity: usize) -> Result<(), FtsxError> {
    if capacity < values.len() {
        return Err(FtsxError::Precondition(format!(
            "buffer holds {capacity} values, {} required",
            values.len()
        )));
    }
    unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

/// Library version as a static UTF-8 string; never null.
#[no_mangle]
pub extern "C" fn ftsx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null if none has
/// occurred. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn ftsx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Creates a series from `t_len` curves of `n_points` values each, row
/// major, observed at strictly increasing abscissae. Abscissae already
/// inside [0, 1] are used verbatim; anything else is mapped affinely onto
/// [0, 1], with the originals kept for output.
///
/// # Safety
/// `abscissae` must point to `n_points` doubles, `values` to
/// `t_len * n_points` doubles, and `out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_new(
    abscissae: *const f64,
    n_points: usize,
    values: *const f64,
    t_len: usize,
    out: *mut *mut FtsxSeries,
) -> FtsxStatus {
    if abscissae.is_null() || values.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_series_new: null argument");
    }
    guarded(|| {
        if t_len == 0 {
            return Err(FtsxError::Precondition("need at least one curve".to_string()));
        }
        let grid = std::slice::from_raw_parts(abscissae, n_points).to_vec();
        let flat = std::slice::from_raw_parts(values, t_len * n_points).to_vec();
        let matrix = Array2::from_shape_vec((t_len, n_points), flat)
            .map_err(|e| FtsxError::DimensionMismatch(e.to_string()))?;
        let data = curves_from_buffer(grid, matrix)?;
        *out = Box::into_raw(Box::new(FtsxSeries { data }));
        Ok(())
    })
}

/// Reads a series from a curve CSV (header = abscissae, one row per curve).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_read_csv(
    path: *const c_char,
    out: *mut *mut FtsxSeries,
) -> FtsxStatus {
    if path.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_series_read_csv: null argument");
    }
    guarded(|| {
        let data = read_curves(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FtsxSeries { data }));
        Ok(())
    })
}

/// Writes the series back to a curve CSV at full precision.
///
/// # Safety
/// `series` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_write_csv(
    series: *const FtsxSeries,
    path: *const c_char,
) -> FtsxStatus {
    if series.is_null() || path.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_series_write_csv: null argument");
    }
    guarded(|| write_curves(path_arg(path)?, &(*series).data))
}

/// Number of curves in the series; zero for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_t_len(series: *const FtsxSeries) -> usize {
    if series.is_null() {
        return 0;
    }
    (*series).data.series.t_len()
}

/// Number of grid points per curve; zero for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_grid_len(series: *const FtsxSeries) -> usize {
    if series.is_null() {
        return 0;
    }
    (*series).data.series.grid().n()
}

/// Copies all curve values, row major, into `out` (capacity counted in
/// doubles and checked against `t_len * grid_len`).
///
/// # Safety
/// `series` must be a live handle and `out` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_values(
    series: *const FtsxSeries,
    out: *mut f64,
    capacity: usize,
) -> FtsxStatus {
    if series.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_series_values: null argument");
    }
    guarded(|| {
        let values = (*series).data.series.values();
        copy_out(values.as_slice().expect("contiguous layout"), out, capacity)
    })
}

/// Copies the original abscissae into `out` (capacity counted in doubles).
///
/// # Safety
/// `series` must be a live handle and `out` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_abscissae(
    series: *const FtsxSeries,
    out: *mut f64,
    capacity: usize,
) -> FtsxStatus {
    if series.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_series_abscissae: null argument");
    }
    guarded(|| copy_out(&(*series).data.abscissae, out, capacity))
}

/// Releases a series handle. Null is ignored.
///
/// # Safety
/// `series` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ftsx_series_free(series: *mut FtsxSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Extracts features from a series: dimension-selected eigenstructure with
/// scores plus block-thresholded residual coefficients at coarsest level
/// `j0` (the command-line default is 3).
///
/// # Safety
/// `series` must be a live handle and `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn ftsx_extract(
    series: *const FtsxSeries,
    mode: FtsxMode,
    j0: u32,
    out: *mut *mut FtsxFeatures,
) -> FtsxStatus {
    if series.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_extract: null argument");
    }
    guarded(|| {
        let data = &(*series).data;
        let mode = match mode {
            FtsxMode::Dynamic => Mode::Dynamic,
            FtsxMode::Static => Mode::Static,
        };
        let (features, bandwidth) = extract_global(&data.series, mode)?;
        let resid = residuals(&data.series, &features)?;
        let basis = WaveletBasis::for_signal_len(data.series.grid().n(), j0)?;
        let local = local_matrix(&resid, &basis)?;
        let doc = FeatureFile::from_parts(
            &data.abscissae,
            &features,
            bandwidth.as_ref(),
            &local,
            &basis,
            None,
        );
        *out = Box::into_raw(Box::new(FtsxFeatures { doc }));
        Ok(())
    })
}

/// Selected dimension of the feature set; zero for a null handle.
///
/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_k(features: *const FtsxFeatures) -> usize {
    if features.is_null() {
        return 0;
    }
    (*features).doc.k
}

/// Covariance mode the features were extracted under.
///
/// # Safety
/// `features` must be null (treated as dynamic) or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_mode(features: *const FtsxFeatures) -> FtsxMode {
    if features.is_null() {
        return FtsxMode::Dynamic;
    }
    match (*features).doc.mode {
        Mode::Dynamic => FtsxMode::Dynamic,
        Mode::Static => FtsxMode::Static,
    }
}

/// Fraction of residual coefficients zeroed by thresholding; NaN for a null
/// handle.
///
/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_sparsity(features: *const FtsxFeatures) -> f64 {
    if features.is_null() {
        return f64::NAN;
    }
    (*features).doc.sparsity
}

/// Long-run covariance bandwidth chosen during extraction; NaN for a null
/// handle or for static-mode features, which carry none.
///
/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_bandwidth(features: *const FtsxFeatures) -> f64 {
    if features.is_null() {
        return f64::NAN;
    }
    (*features).doc.bandwidth.as_ref().map_or(f64::NAN, |b| b.h_opt)
}

/// Copies the retained eigenvalues into `out`; their count equals the
/// selected dimension.
///
/// # Safety
/// `features` must be a live handle and `out` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_eigenvalues(
    features: *const FtsxFeatures,
    out: *mut f64,
    capacity: usize,
) -> FtsxStatus {
    if features.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_features_eigenvalues: null argument");
    }
    guarded(|| copy_out(&(*features).doc.eigenvalues, out, capacity))
}

/// Saves the feature set to a JSON document.
///
/// # Safety
/// `features` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_save(
    features: *const FtsxFeatures,
    path: *const c_char,
) -> FtsxStatus {
    if features.is_null() || path.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_features_save: null argument");
    }
    guarded(|| write_features(path_arg(path)?, &(*features).doc))
}

/// Loads a feature set previously written by `ftsx_features_save` or the
/// command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_load(
    path: *const c_char,
    out: *mut *mut FtsxFeatures,
) -> FtsxStatus {
    if path.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_features_load: null argument");
    }
    guarded(|| {
        let doc = read_features(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FtsxFeatures { doc }));
        Ok(())
    })
}

/// Releases a feature handle. Null is ignored.
///
/// # Safety
/// `features` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ftsx_features_free(features: *mut FtsxFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Forecasts `horizon` steps ahead from a feature set. With `coverage` in
/// (0, 1) the result also carries prediction intervals calibrated against
/// `series`, the data the features were extracted from; with `coverage` at
/// or below zero the forecast is point-only and `series` may be null.
///
/// # Safety
/// `features` must be a live handle, `series` null or a live handle as
/// described, and `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn ftsx_forecast(
    features: *const FtsxFeatures,
    series: *const FtsxSeries,
    horizon: usize,
    coverage: f64,
    out: *mut *mut FtsxForecast,
) -> FtsxStatus {
    if features.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_forecast: null argument");
    }
    if coverage > 0.0 && series.is_null() {
        return fail(
            FtsxStatus::NullArgument,
            "ftsx_forecast: interval calibration needs the original series",
        );
    }
    guarded(|| {
        if horizon == 0 {
            return Err(FtsxError::InvalidArgument(
                "forecast horizon must be at least 1".to_string(),
            ));
        }
        let doc = &(*features).doc;
        let global = doc.global_features()?;
        let basis = doc.basis()?;
        let map = build_nrsi(&doc.unit_grid()?, &basis)?;
        let coeffs = doc.coeff_matrix()?;
        let bundle = if coverage > 0.0 {
            calibrate_intervals(
                &global,
                &coeffs,
                &map,
                &basis,
                &(*series).data.series,
                horizon,
                coverage,
            )?
        } else {
            forecast_curves(&global, &coeffs, &map, &basis, horizon)?
        };
        *out = Box::into_raw(Box::new(FtsxForecast {
            bundle,
            abscissae: doc.abscissae.clone(),
        }));
        Ok(())
    })
}

/// Number of forecast steps; zero for a null handle.
///
/// # Safety
/// `forecast` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_forecast_horizon(forecast: *const FtsxForecast) -> usize {
    if forecast.is_null() {
        return 0;
    }
    (*forecast).bundle.horizon
}

/// Number of grid points per forecast curve; zero for a null handle.
///
/// # Safety
/// `forecast` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ftsx_forecast_grid_len(forecast: *const FtsxForecast) -> usize {
    if forecast.is_null() {
        return 0;
    }
    (*forecast).abscissae.len()
}

/// Copies the point forecast for one step (0-based, ahead of the sample
/// end) into `out`.
///
/// # Safety
/// `forecast` must be a live handle and `out` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ftsx_forecast_point(
    forecast: *const FtsxForecast,
    step: usize,
    out: *mut f64,
    capacity: usize,
) -> FtsxStatus {
    if forecast.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_forecast_point: null argument");
    }
    guarded(|| {
        let bundle = &(*forecast).bundle;
        if step >= bundle.horizon {
            return Err(FtsxError::InvalidArgument(format!(
                "step {step} beyond horizon {}",
                bundle.horizon
            )));
        }
        copy_out(bundle.point.row(step).as_slice().expect("contiguous"), out, capacity)
    })
}

/// Copies the interval bounds for one step into `lower` and `upper`. Fails
/// with a precondition error on a point-only forecast.
///
/// # Safety
/// `forecast` must be a live handle; `lower` and `upper` must each point to
/// `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ftsx_forecast_interval(
    forecast: *const FtsxForecast,
    step: usize,
    lower: *mut f64,
    upper: *mut f64,
    capacity: usize,
) -> FtsxStatus {
    if forecast.is_null() || lower.is_null() || upper.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_forecast_interval: null argument");
    }
    guarded(|| {
        let bundle = &(*forecast).bundle;
        if step >= bundle.horizon {
            return Err(FtsxError::InvalidArgument(format!(
                "step {step} beyond horizon {}",
                bundle.horizon
            )));
        }
        let intervals = bundle.intervals.as_ref().ok_or_else(|| {
            FtsxError::Precondition("forecast carries no intervals".to_string())
        })?;
        copy_out(intervals.lower.row(step).as_slice().expect("contiguous"), lower, capacity)?;
        copy_out(intervals.upper.row(step).as_slice().expect("contiguous"), upper, capacity)
    })
}

/// Releases a forecast handle. Null is ignored.
///
/// # Safety
/// `forecast` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ftsx_forecast_free(forecast: *mut FtsxForecast) {
    if !forecast.is_null() {
        drop(Box::from_raw(forecast));
    }
}

/// Smooths every curve by penalized least squares, selecting one shared
/// penalty from the given candidate grid, and returns the smoothed series
/// as a new handle on the same abscissae.
///
/// # Safety
/// `series` must be a live handle, `lambda_grid` must point to `grid_len`
/// doubles, and `out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn ftsx_smooth(
    series: *const FtsxSeries,
    lambda_grid: *const f64,
    grid_len: usize,
    out: *mut *mut FtsxSeries,
) -> FtsxStatus {
    if series.is_null() || lambda_grid.is_null() || out.is_null() {
        return fail(FtsxStatus::NullArgument, "ftsx_smooth: null argument");
    }
    guarded(|| {
        let data = &(*series).data;
        let candidates = std::slice::from_raw_parts(lambda_grid, grid_len);
        let report = smooth_series(&data.series, candidates)?;
        let smoothed: FunctionalSeries = report.smoothed;
        *out = Box::into_raw(Box::new(FtsxSeries {
            data: CurveData::new(data.abscissae.clone(), smoothed)?,
        }));
        Ok(())
    })
}
