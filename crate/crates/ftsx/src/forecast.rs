//! Univariate autoregressive modeling of score and coefficient series,
//! h-step point forecasts of whole curves, and pointwise prediction
//! intervals calibrated on rolling in-sample forecast errors.
//!
//! The time-series family is deliberately small: differencing order d ∈
//! {0,1,2} chosen by a variance-reduction rule, then a stationary AR(p),
//! p ∈ {0..5}, on the differenced series. That covers persistent scores,
//! random-walk-like coefficients, and trending components without any
//! optimizer in the loop, so fits are deterministic and fast enough to
//! refit thousands of short series inside calibration and simulation runs.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use crate::core::FunctionalSeries;
use crate::error::{FtsxError, Result};
use crate::fpca::GlobalFeatures;
use crate::wavelet::{gather, idwt, CoeffSet, NrsiMap, WaveletBasis};

/// A fitted AR(p) model on the d-times-differenced series.
#[derive(Debug, Clone)]
pub struct ArimaFit {
    /// Differencing order, 0..=2.
    pub d: usize,
    /// Autoregressive order, 0..=5.
    pub p: usize,
    /// AR coefficients φ₁..φ_p of the differenced series.
    pub coefficients: Vec<f64>,
    /// Constant term of the AR recursion.
    pub intercept: f64,
    /// Innovation variance of the fitted model.
    pub innovation_variance: f64,
    /// Order-selection criterion value at the chosen order.
    pub aic: f64,
}

/// Prediction interval bounds attached to a point forecast.
#[derive(Debug, Clone)]
pub struct IntervalBounds {
    /// h×n lower bound curves.
    pub lower: Array2<f64>,
    /// h×n upper bound curves.
    pub upper: Array2<f64>,
    /// Requested coverage level in (0,1).
    pub nominal_coverage: f64,
    /// Scale factor applied to the base error quantiles.
    pub scale: f64,
    /// In-sample fraction of calibration errors inside the scaled bounds.
    pub achieved_coverage: f64,
}

/// h-step-ahead forecast curves, optionally with calibrated interval bounds.
#[derive(Debug, Clone)]
pub struct ForecastBundle {
    pub horizon: usize,
    /// h×n point forecast curves; row s is the (s+1)-step-ahead forecast.
    pub point: Array2<f64>,
    pub intervals: Option<IntervalBounds>,
}

fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Centered autocovariances with divisor m (keeps the sequence positive
/// semidefinite, so the Levinson recursion below stays stable).
fn autocovariances(x: &[f64], max_lag: usize) -> Vec<f64> {
    let m = x.len();
    let mean = x.iter().sum::<f64>() / m as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .map(|l| (0..m - l).map(|t| c[t] * c[t + l]).sum::<f64>() / m as f64)
        .collect()
}

/// Levinson–Durbin recursion: Yule–Walker solutions (φ, σ²) for every order
/// 0..=p_max. Stops early if a reflection coefficient leaves (−1, 1).
fn levinson(gamma: &[f64], p_max: usize) -> Vec<(Vec<f64>, f64)> {
    let mut fits = vec![(Vec::new(), gamma[0])];
    let mut phi: Vec<f64> = Vec::new();
    let mut sigma2 = gamma[0];
    for k in 1..=p_max {
        let num = gamma[k]
            - (0..k - 1).map(|j| phi[j] * gamma[k - 1 - j]).sum::<f64>();
        let kappa = num / sigma2;
        if !kappa.is_finite() || kappa.abs() >= 1.0 {
            break;
        }
        let mut next = Vec::with_capacity(k);
        for j in 0..k - 1 {
            next.push(phi[j] - kappa * phi[k - 2 - j]);
        }
        next.push(kappa);
        sigma2 *= 1.0 - kappa * kappa;
        phi = next;
        fits.push((phi.clone(), sigma2));
    }
    fits
}

/// All roots of the AR characteristic polynomial strictly inside the unit
/// circle (equivalently, AR polynomial roots outside), via the companion
/// matrix spectrum.
fn ar_is_stationary(coefficients: &[f64]) -> bool {
    let p = coefficients.len();
    if p == 0 {
        return true;
    }
    if p == 1 {
        return coefficients[0].abs() < 1.0 - 1e-9;
    }
    let mut companion = DMatrix::<f64>::zeros(p, p);
    for (j, &c) in coefficients.iter().enumerate() {
        companion[(0, j)] = c;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .all(|z| z.norm() < 1.0 - 1e-9)
}

/// Conditional least-squares refit at a fixed order: regress w_t on
/// (1, w_{t−1}, …, w_{t−p}). Returns (coefficients, intercept, residual
/// variance), or None if the system cannot be solved.
fn least_squares_ar(w: &[f64], p: usize) -> Option<(Vec<f64>, f64, f64)> {
    let m = w.len();
    if m <= 2 * p + 1 {
        return None;
    }
    let rows = m - p;
    let mut x = DMatrix::<f64>::zeros(rows, p + 1);
    let mut y = DVector::<f64>::zeros(rows);
    for r in 0..rows {
        let t = p + r;
        x[(r, 0)] = 1.0;
        for j in 0..p {
            x[(r, j + 1)] = w[t - 1 - j];
        }
        y[r] = w[t];
    }
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&y, 1e-12).ok()?;
    let residual = &y - &x * &beta;
    let sigma2 = residual.norm_squared() / rows as f64;
    if !sigma2.is_finite() || !beta.iter().all(|b| b.is_finite()) {
        return None;
    }
    let intercept = beta[0];
    let coefficients: Vec<f64> = beta.iter().skip(1).copied().collect();
    Some((coefficients, intercept, sigma2))
}

/// Fits a differenced autoregression to a scalar series.
///
/// The differencing order d is the smallest value in {0,1,2} at which taking
/// one more difference no longer collapses the sample variance (next
/// variance above 10% of the current one). The AR order on the differenced
/// series is selected by AIC over p ∈ {0..5} with Yule–Walker estimates;
/// the criterion uses the degrees-of-freedom-corrected innovation variance
/// σ̂²·m/(m−p−1), which guards against the overfit bias of raw AIC on white
/// noise. At the selected order the coefficients are refined by conditional
/// least squares when that refit is stationary (exact on noiseless
/// recursions); otherwise the Yule–Walker solution, which is stationary by
/// construction, is kept.
pub fn fit_arima(series: &[f64]) -> Result<ArimaFit> {
    if series.len() < 8 {
        return Err(FtsxError::Precondition(format!(
            "model fitting needs at least 8 observations, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(FtsxError::InvalidArgument("series contains non-finite values".into()));
    }

    // All-constant series: nothing to model.
    if series.iter().all(|&v| v == series[0]) {
        return Ok(ArimaFit {
            d: 0,
            p: 0,
            coefficients: Vec::new(),
            intercept: series[0],
            innovation_variance: 0.0,
            aic: f64::NEG_INFINITY,
        });
    }

    // Differencing order by variance collapse.
    let mut w: Vec<f64> = series.to_vec();
    let mut d = 0usize;
    while d < 2 {
        let next = difference(&w);
        if population_variance(&next) <= 0.1 * population_variance(&w) {
            w = next;
            d += 1;
        } else {
            break;
        }
    }

    let m = w.len();
    let mean = w.iter().sum::<f64>() / m as f64;
    if w.iter().all(|&v| v == w[0]) || population_variance(&w) == 0.0 {
        return Ok(ArimaFit {
            d,
            p: 0,
            coefficients: Vec::new(),
            intercept: mean,
            innovation_variance: 0.0,
            aic: f64::NEG_INFINITY,
        });
    }

    let p_max = 5.min(m - 2);
    let gamma = autocovariances(&w, p_max);
    let fits = levinson(&gamma, p_max);

    let mut best_p = 0usize;
    let mut best_aic = f64::INFINITY;
    for (p, (_, sigma2)) in fits.iter().enumerate() {
        let adjusted = sigma2.max(1e-300) * m as f64 / (m - p - 1) as f64;
        let aic = m as f64 * adjusted.ln() + 2.0 * (p + 1) as f64;
        if aic < best_aic {
            best_aic = aic;
            best_p = p;
        }
    }

    let (yw_phi, yw_sigma2) = fits[best_p].clone();
    let (coefficients, intercept, innovation_variance) = if best_p > 0 {
        match least_squares_ar(&w, best_p) {
            Some((phi, c, s2)) if ar_is_stationary(&phi) => (phi, c, s2),
            _ => {
                let c = mean * (1.0 - yw_phi.iter().sum::<f64>());
                (yw_phi, c, yw_sigma2)
            }
        }
    } else {
        (Vec::new(), mean, yw_sigma2)
    };

    Ok(ArimaFit {
        d,
        p: best_p,
        coefficients,
        intercept,
        innovation_variance,
        aic: best_aic,
    })
}

/// Iterated h-step forecast: AR recursion on the d-times-differenced series,
/// then cumulative undifferencing anchored at the observed tail.
pub fn forecast_arima(fit: &ArimaFit, series: &[f64], h: usize) -> Result<Vec<f64>> {
    if h == 0 {
        return Err(FtsxError::InvalidArgument("forecast horizon must be at least 1".into()));
    }
    if series.len() < fit.d + fit.p || series.is_empty() {
        return Err(FtsxError::Precondition(format!(
            "series of length {} too short to seed a d={} p={} forecast",
            series.len(),
            fit.d,
            fit.p
        )));
    }

    // Differenced tails: stages[k] is the k-times-differenced series.
    let mut stages: Vec<Vec<f64>> = vec![series.to_vec()];
    for _ in 0..fit.d {
        let prev = stages.last().expect("at least one stage");
        stages.push(difference(prev));
    }

    // AR recursion on the deepest stage.
    let w = stages.last().expect("deepest stage");
    let mut history: Vec<f64> = w[w.len() - fit.p..].to_vec();
    let mut fc = Vec::with_capacity(h);
    for _ in 0..h {
        let mut next = fit.intercept;
        for (j, &c) in fit.coefficients.iter().enumerate() {
            next += c * history[history.len() - 1 - j];
        }
        history.push(next);
        fc.push(next);
    }

    // Undifference one stage at a time: forecasts of stage k+1 integrate to
    // forecasts of stage k as running sums anchored at stage k's last value.
    for k in (0..fit.d).rev() {
        let mut anchor = *stages[k].last().expect("non-empty stage");
        for v in fc.iter_mut() {
            anchor += *v;
            *v = anchor;
        }
    }
    Ok(fc)
}

/// Minimum nonzero count for a coefficient row to get its own model.
fn row_fit_cutoff(t: usize) -> f64 {
    4f64.max(0.1 * t as f64)
}

/// Forecasts every score column and every sufficiently-populated wavelet
/// coefficient row h steps ahead, then reassembles forecast curves as
/// mean + global part + local part.
pub fn forecast_curves(
    features: &GlobalFeatures,
    coeff_matrix: &Array2<f64>,
    map: &NrsiMap,
    basis: &WaveletBasis,
    h: usize,
) -> Result<ForecastBundle> {
    if h == 0 {
        return Err(FtsxError::InvalidArgument("forecast horizon must be at least 1".into()));
    }
    let t = features.scores.nrows();
    if t < 8 {
        return Err(FtsxError::Precondition(format!(
            "forecasting needs at least 8 curves, got {t}"
        )));
    }
    let n_dyadic = basis.n();
    if coeff_matrix.nrows() != n_dyadic || coeff_matrix.ncols() != t {
        return Err(FtsxError::DimensionMismatch(format!(
            "coefficient matrix is {}×{}, expected {}×{}",
            coeff_matrix.nrows(),
            coeff_matrix.ncols(),
            n_dyadic,
            t
        )));
    }
    if map.grid() != &features.grid || map.n_dyadic() != n_dyadic {
        return Err(FtsxError::DimensionMismatch(
            "interpolation map does not match the features' grid or the basis size".into(),
        ));
    }

    // Score forecasts: h×K.
    let k = features.k;
    let mut score_fc = Array2::zeros((h, k));
    for col in 0..k {
        let series: Vec<f64> = features.scores.column(col).to_vec();
        let fit = fit_arima(&series)?;
        let fc = forecast_arima(&fit, &series, h)?;
        for (s, v) in fc.into_iter().enumerate() {
            score_fc[[s, col]] = v;
        }
    }

    // Coefficient-row forecasts: rows with too few nonzero entries stay zero.
    let cutoff = row_fit_cutoff(t);
    let row_fc: Vec<Vec<f64>> = (0..n_dyadic)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = coeff_matrix.row(i).to_vec();
            let nonzero = row.iter().filter(|&&v| v != 0.0).count();
            if (nonzero as f64) < cutoff {
                return Ok(vec![0.0; h]);
            }
            let fit = fit_arima(&row)?;
            forecast_arima(&fit, &row, h)
        })
        .collect::<Result<_>>()?;

    // Assemble curves: mean + Σ_k β̂φ̂_k + local reconstruction.
    let n = features.grid.n();
    let mut point = Array2::zeros((h, n));
    for s in 0..h {
        let coeff_vec: Vec<f64> = (0..n_dyadic).map(|i| row_fc[i][s]).collect();
        let local = gather(&idwt(&CoeffSet::new(coeff_vec, basis.coarsest_level())?, basis)?, map);
        for i in 0..n {
            let mut v = features.mean[i] + local[i];
            for col in 0..k {
                v += score_fc[[s, col]] * features.eigenfunctions[[i, col]];
            }
            point[[s, i]] = v;
        }
    }
    Ok(ForecastBundle {
        horizon: h,
        point,
        intervals: None,
    })
}

/// Type-7 empirical quantile (linear interpolation of order statistics) of a
/// sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let pos = q * (m - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Base quantile bounds and pooled scale factor from an M×n matrix of
/// in-sample forecast error curves. Returns (γ_lb, γ_ub, π, achieved).
fn calibrate_from_errors(
    errors: &Array2<f64>,
    coverage: f64,
) -> Result<(Array1<f64>, Array1<f64>, f64, f64)> {
    let (m, n) = errors.dim();
    let alpha_lo = (1.0 - coverage) / 2.0;
    let alpha_hi = (1.0 + coverage) / 2.0;

    let mut gamma_lb = Array1::zeros(n);
    let mut gamma_ub = Array1::zeros(n);
    for i in 0..n {
        let mut col: Vec<f64> = errors.column(i).to_vec();
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        // Clamping to straddle zero keeps the scaled bounds bracketing the
        // point forecast; exactly-zero widths widen by machine epsilon.
        let lb = quantile_sorted(&col, alpha_lo).min(0.0);
        let ub = quantile_sorted(&col, alpha_hi).max(0.0);
        if lb == 0.0 && ub == 0.0 {
            gamma_lb[i] = -f64::EPSILON;
            gamma_ub[i] = f64::EPSILON;
        } else {
            gamma_lb[i] = lb;
            gamma_ub[i] = ub;
        }
    }

    let fraction_inside = |pi: f64| -> f64 {
        let mut inside = 0usize;
        for z in 0..m {
            for i in 0..n {
                let e = errors[[z, i]];
                if pi * gamma_lb[i] <= e && e <= pi * gamma_ub[i] {
                    inside += 1;
                }
            }
        }
        inside as f64 / (m * n) as f64
    };

    // Minimal π in [0.1, 10] reaching nominal coverage; the fraction is
    // nondecreasing in π, so bisection applies.
    let (mut lo, mut hi) = (0.1f64, 10.0f64);
    if fraction_inside(hi) < coverage {
        return Err(FtsxError::Numeric(
            "interval calibration cannot reach nominal coverage within the scale range".into(),
        ));
    }
    let pi = if fraction_inside(lo) >= coverage {
        lo
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if fraction_inside(mid) >= coverage {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let achieved = fraction_inside(pi);
    Ok((gamma_lb, gamma_ub, pi, achieved))
}

/// Rolling in-sample error collection and interval calibration.
///
/// For each training size ξ the first ξ curves are refit (eigenfunctions and
/// thresholded coefficients stay fixed from the full sample; only the
/// univariate models are refit) and the resulting h-step forecast is
/// compared against the realized curve. Pointwise error quantiles, scaled by
/// a single π found by bisection so the in-sample coverage of the scaled
/// bounds reaches the nominal level, are attached to the full-sample point
/// forecast. Training sizes start at max(K̂, 8) so every refit has enough
/// observations.
pub fn calibrate_intervals(
    features: &GlobalFeatures,
    coeff_matrix: &Array2<f64>,
    map: &NrsiMap,
    basis: &WaveletBasis,
    series: &FunctionalSeries,
    h: usize,
    coverage: f64,
) -> Result<ForecastBundle> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(FtsxError::InvalidArgument(format!(
            "coverage must lie in (0,1), got {coverage}"
        )));
    }
    let t = features.scores.nrows();
    if series.t_len() != t || series.grid() != &features.grid {
        return Err(FtsxError::DimensionMismatch(
            "series does not match the features it was decomposed into".into(),
        ));
    }

    let xi_start = features.k.max(8);
    if t < xi_start + h {
        return Err(FtsxError::Precondition(format!(
            "no calibration errors available: T = {t}, horizon = {h}"
        )));
    }
    let m_errors = t - h - xi_start + 1;
    if m_errors < 10 {
        return Err(FtsxError::Precondition(format!(
            "interval calibration needs at least 10 in-sample error curves, got {m_errors}"
        )));
    }
    if (1.0 - coverage) * (m_errors as f64) < 1.0 {
        return Err(FtsxError::Precondition(format!(
            "insufficient error curves to estimate the {coverage} coverage quantiles from {m_errors} samples"
        )));
    }

    let n = features.grid.n();
    let error_rows: Vec<Vec<f64>> = (xi_start..=t - h)
        .into_par_iter()
        .map(|xi| -> Result<Vec<f64>> {
            let sub_features = GlobalFeatures {
                mean: features.mean.clone(),
                k: features.k,
                eigenfunctions: features.eigenfunctions.clone(),
                eigenvalues: features.eigenvalues.clone(),
                scores: features.scores.slice(s![..xi, ..]).to_owned(),
                mode: features.mode,
                grid: features.grid.clone(),
            };
            let sub_coeffs = coeff_matrix.slice(s![.., ..xi]).to_owned();
            let bundle = forecast_curves(&sub_features, &sub_coeffs, map, basis, h)?;
            let target = series.curve(xi + h - 1);
            Ok((0..n).map(|i| target[i] - bundle.point[[h - 1, i]]).collect())
        })
        .collect::<Result<_>>()?;

    let mut errors = Array2::zeros((m_errors, n));
    for (z, row) in error_rows.into_iter().enumerate() {
        for (i, v) in row.into_iter().enumerate() {
            errors[[z, i]] = v;
        }
    }

    let (gamma_lb, gamma_ub, pi, achieved) = calibrate_from_errors(&errors, coverage)?;

    let bundle = forecast_curves(features, coeff_matrix, map, basis, h)?;
    let mut lower = bundle.point.clone();
    let mut upper = bundle.point.clone();
    for s_idx in 0..h {
        for i in 0..n {
            lower[[s_idx, i]] += pi * gamma_lb[i];
            upper[[s_idx, i]] += pi * gamma_ub[i];
        }
    }
    Ok(ForecastBundle {
        horizon: h,
        point: bundle.point,
        intervals: Some(IntervalBounds {
            lower,
            upper,
            nominal_coverage: coverage,
            scale: pi,
            achieved_coverage: achieved,
        }),
    })
}

/// Mean interval score over the grid: width plus 2/a times the distance by
/// which the actual value escapes the interval.
pub fn interval_score(lower: &[f64], upper: &[f64], actual: &[f64], a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(FtsxError::InvalidArgument(format!(
            "score level must lie in (0,1), got {a}"
        )));
    }
    if lower.len() != upper.len() || lower.len() != actual.len() || lower.is_empty() {
        return Err(FtsxError::DimensionMismatch(format!(
            "interval score needs equal-length curves, got {}/{}/{}",
            lower.len(),
            upper.len(),
            actual.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..lower.len() {
        let (lb, ub, x) = (lower[i], upper[i], actual[i]);
        if lb > ub {
            return Err(FtsxError::InvalidArgument(format!(
                "lower bound {lb} exceeds upper bound {ub} at position {i}"
            )));
        }
        let mut v = ub - lb;
        if x < lb {
            v += 2.0 / a * (lb - x);
        }
        if x > ub {
            v += 2.0 / a * (x - ub);
        }
        total += v;
    }
    Ok(total / lower.len() as f64)
}
