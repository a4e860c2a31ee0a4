//! Penalized B-spline smoothing of raw curves: cubic B-splines on equally
//! spaced knots, a squared-second-difference penalty on the coefficients,
//! and a single roughness weight shared across curves, chosen as the median
//! of the per-curve generalized cross-validation optima.

use nalgebra::{Cholesky, DMatrix};
use ndarray::Array2;

use crate::core::{FunctionalSeries, Grid};
use crate::error::{FtsxError, Result};

/// Smallest grid the spline basis is defined on.
const MIN_GRID: usize = 10;

/// Upper bound on the basis size regardless of grid resolution.
const MAX_BASIS: usize = 100;

/// A smoothed series together with the penalty weights that produced it.
#[derive(Debug, Clone)]
pub struct SmoothReport {
    /// Smoothed curves evaluated on the input grid.
    pub smoothed: FunctionalSeries,
    /// Roughness weight shared across curves: the median of
    /// `per_curve_lambda` (lower middle for even counts, so the shared value
    /// is always a member of the candidate grid).
    pub lambda: f64,
    /// GCV-optimal roughness weight for each curve separately; ties resolve
    /// to the smallest candidate.
    pub per_curve_lambda: Vec<f64>,
}

/// Smooths every curve of `series` by penalized least squares on a cubic
/// B-spline basis with `min(n/2, 100)` equally spaced basis functions.
///
/// Each candidate λ in `lambda_grid` is scored per curve by
/// GCV(λ) = n·RSS(λ) / (n − tr H(λ))², where H(λ) is the hat matrix of the
/// penalized fit. One λ — the median of the per-curve optima — is then used
/// to refit all curves, so the output shares a common smoothness level.
///
/// Errors with [`FtsxError::Precondition`] when the grid has fewer than 10
/// points, [`FtsxError::InvalidArgument`] when `lambda_grid` is empty or
/// contains a negative or non-finite value, and [`FtsxError::Numeric`] when
/// the penalized normal equations are not positive definite (possible at
/// λ = 0 on grids that leave some basis function unobserved).
pub fn smooth_series(series: &FunctionalSeries, lambda_grid: &[f64]) -> Result<SmoothReport> {
    let n = series.grid().n();
    if n < MIN_GRID {
        return Err(FtsxError::Precondition(format!(
            "smoothing needs at least {MIN_GRID} grid points, got {n}"
        )));
    }
    if lambda_grid.is_empty() {
        return Err(FtsxError::InvalidArgument(
            "penalty grid is empty".to_string(),
        ));
    }
    for &lambda in lambda_grid {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(FtsxError::InvalidArgument(format!(
                "penalty weights must be finite and nonnegative, got {lambda}"
            )));
        }
    }
    // Candidates in ascending order with duplicates collapsed: the selection
    // below keeps the first minimum, so ties go to the smallest λ and the
    // result does not depend on the order the caller listed them in.
    let mut candidates = lambda_grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let t_len = series.t_len();
    let n_basis = basis_size(n);
    let design = design_matrix(series.grid(), n_basis);
    let penalty = penalty_matrix(n_basis);
    let btb = design.transpose() * &design;
    let y = DMatrix::from_fn(n, t_len, |i, t| series.values()[[t, i]]);
    let bty = design.transpose() * &y;

    let mut best_gcv = vec![f64::INFINITY; t_len];
    let mut best_lambda = vec![candidates[0]; t_len];
    for &lambda in &candidates {
        let (fits, edf) = fit_at(&design, &btb, &penalty, &bty, lambda)?;
        let denom = n as f64 - edf;
        if denom <= 0.0 {
            return Err(FtsxError::Numeric(format!(
                "hat-matrix trace {edf:.3} exhausts the {n} observations at λ = {lambda}"
            )));
        }
        for t in 0..t_len {
            let rss = (y.column(t) - fits.column(t)).norm_squared();
            let gcv = n as f64 * rss / (denom * denom);
            if gcv < best_gcv[t] {
                best_gcv[t] = gcv;
                best_lambda[t] = lambda;
            }
        }
    }

    let mut sorted = best_lambda.clone();
    sorted.sort_by(f64::total_cmp);
    let shared = sorted[(t_len - 1) / 2];

    let (fits, _) = fit_at(&design, &btb, &penalty, &bty, shared)?;
    let values = Array2::from_shape_fn((t_len, n), |(t, i)| fits[(i, t)]);
    Ok(SmoothReport {
        smoothed: FunctionalSeries::new(series.grid().clone(), values)?,
        lambda: shared,
        per_curve_lambda: best_lambda,
    })
}

/// Number of basis functions used for an `n`-point grid.
fn basis_size(n: usize) -> usize {
    (n / 2).min(MAX_BASIS)
}

/// The uniform cubic B-spline kernel on [0, 4]: piecewise cubic, C²,
/// peaking at 2/3 in the middle of its support.
fn cubic_bspline(t: f64) -> f64 {
    if t <= 0.0 || t >= 4.0 {
        0.0
    } else if t < 1.0 {
        t * t * t / 6.0
    } else if t < 2.0 {
        (((-3.0 * t + 12.0) * t - 12.0) * t + 4.0) / 6.0
    } else if t < 3.0 {
        (((3.0 * t - 24.0) * t + 60.0) * t - 44.0) / 6.0
    } else {
        let s = 4.0 - t;
        s * s * s / 6.0
    }
}

/// Design matrix of `n_basis` uniform cubic B-splines evaluated at the grid
/// points. Knots are equally spaced across the grid's range and extend past
/// both ends (no clamping), so the basis sums to one everywhere and
/// coefficient sequences that are linear in the basis index reproduce
/// linear functions exactly.
fn design_matrix(grid: &Grid, n_basis: usize) -> DMatrix<f64> {
    let a = grid.points()[0];
    let b = grid.points()[grid.n() - 1];
    let n_seg = (n_basis - 3) as f64;
    let h = (b - a) / n_seg;
    DMatrix::from_fn(grid.n(), n_basis, |i, j| {
        let u = (grid.points()[i] - a) / h;
        cubic_bspline(u - j as f64 + 3.0)
    })
}

/// DᵀD for the (n_basis − 2) × n_basis second-difference matrix D. Its null
/// space is exactly the coefficient sequences linear in the index, so an
/// infinite penalty degenerates the fit to per-curve linear regression.
fn penalty_matrix(n_basis: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n_basis - 2, n_basis);
    for r in 0..n_basis - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    d.transpose() * d
}

/// Solves the penalized normal equations (BᵀB + λP)C = BᵀY for all curves at
/// once and returns the fitted values together with the effective degrees of
/// freedom tr H(λ) = tr((BᵀB + λP)⁻¹BᵀB).
fn fit_at(
    design: &DMatrix<f64>,
    btb: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    bty: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let chol = Cholesky::new(btb + penalty * lambda).ok_or_else(|| {
        FtsxError::Numeric(format!(
            "penalized normal equations are not positive definite at λ = {lambda}"
        ))
    })?;
    let coef = chol.solve(bty);
    let edf = chol.solve(btb).trace();
    Ok((design * coef, edf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va * vb).sqrt()
    }

    #[test]
    fn kernel_matches_closed_form_values() {
        assert_eq!(cubic_bspline(0.0), 0.0);
        assert_eq!(cubic_bspline(4.0), 0.0);
        assert_eq!(cubic_bspline(-1.0), 0.0);
        assert_relative_eq!(cubic_bspline(1.0), 1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(cubic_bspline(2.0), 4.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(cubic_bspline(3.0), 1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(cubic_bspline(0.5), 0.125 / 6.0, max_relative = 1e-14);
        // Symmetric about the middle of its support.
        for &t in &[0.3, 0.9, 1.4, 1.9] {
            assert_relative_eq!(cubic_bspline(t), cubic_bspline(4.0 - t), max_relative = 1e-13);
        }
        // C⁰ across the interior knots (the piecewise formulas agree).
        for &knot in &[1.0, 2.0, 3.0] {
            let below = cubic_bspline(knot - 1e-9);
            let above = cubic_bspline(knot + 1e-9);
            assert!((below - above).abs() < 1e-8);
        }
    }

    #[test]
    fn basis_size_caps_at_hundred() {
        assert_eq!(basis_size(20), 10);
        assert_eq!(basis_size(21), 10);
        assert_eq!(basis_size(200), 100);
        assert_eq!(basis_size(1000), 100);
    }

    #[test]
    fn design_rows_form_partition_of_unity() {
        // Non-uniform grid: squared uniform points, still strictly increasing.
        let pts: Vec<f64> = (0..50).map(|i| (i as f64 / 49.0).powi(2)).collect();
        let grid = Grid::new(pts).unwrap();
        let design = design_matrix(&grid, basis_size(50));
        for i in 0..grid.n() {
            assert_relative_eq!(design.row(i).sum(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn design_reproduces_linear_functions_exactly() {
        let grid = Grid::uniform(40).unwrap();
        let n_basis = basis_size(40);
        let design = design_matrix(&grid, n_basis);
        let n_seg = (n_basis - 3) as f64;
        let h = 1.0 / n_seg;
        // Coefficients at the Greville abscissae reproduce the identity.
        let coef = DMatrix::from_fn(n_basis, 1, |j, _| (j as f64 - 1.0) * h);
        let fitted = &design * coef;
        for (i, &u) in grid.points().iter().enumerate() {
            assert_relative_eq!(fitted[(i, 0)], u, epsilon = 1e-12);
        }
    }

    #[test]
    fn penalty_annihilates_linear_coefficients_only() {
        let p = penalty_matrix(12);
        let linear = DMatrix::from_fn(12, 1, |j, _| 0.7 - 0.3 * j as f64);
        assert!((&p * &linear).norm() < 1e-12);
        let quadratic = DMatrix::from_fn(12, 1, |j, _| (j * j) as f64);
        assert!((&p * &quadratic).norm() > 1.0);
    }

    #[test]
    fn zero_penalty_recovers_targets_inside_the_basis_span() {
        let grid = Grid::uniform(60).unwrap();
        let n_basis = basis_size(60);
        let design = design_matrix(&grid, n_basis);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coef = DMatrix::from_fn(n_basis, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let targets = &design * &coef;
        let values = Array2::from_shape_fn((3, 60), |(t, i)| targets[(i, t)]);
        let series = FunctionalSeries::new(grid, values).unwrap();

        let report = smooth_series(&series, &[0.0]).unwrap();
        assert_eq!(report.lambda, 0.0);
        for t in 0..3 {
            for i in 0..60 {
                assert!((report.smoothed.values()[[t, i]] - targets[(i, t)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn huge_penalty_degenerates_to_linear_regression() {
        let grid = Grid::uniform(80).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values = Array2::from_shape_fn((2, 80), |(t, i)| {
            let u = grid.points()[i];
            (1.0 + t as f64) * (4.0 * u).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        let series = FunctionalSeries::new(grid.clone(), values.clone()).unwrap();

        let report = smooth_series(&series, &[1e10]).unwrap();
        // Closed-form simple linear regression per curve.
        let n = 80.0;
        let xbar = grid.points().iter().sum::<f64>() / n;
        let sxx: f64 = grid.points().iter().map(|&u| (u - xbar).powi(2)).sum();
        for t in 0..2 {
            let ybar = values.row(t).sum() / n;
            let sxy: f64 = grid
                .points()
                .iter()
                .zip(values.row(t))
                .map(|(&u, &y)| (u - xbar) * (y - ybar))
                .sum();
            let slope = sxy / sxx;
            for i in 0..80 {
                let line = ybar + slope * (grid.points()[i] - xbar);
                assert!(
                    (report.smoothed.values()[[t, i]] - line).abs() < 1e-5,
                    "curve {t} point {i}: {} vs line {line}",
                    report.smoothed.values()[[t, i]]
                );
            }
        }
    }

    #[test]
    fn gcv_tracks_a_sine_through_noise_at_snr_five() {
        let n = 200;
        let grid = Grid::uniform(n).unwrap();
        let clean: Vec<f64> = grid
            .points()
            .iter()
            .map(|&u| (2.0 * std::f64::consts::PI * u).sin())
            .collect();
        // Signal variance of a full sine period is 1/2; SNR 5 puts the noise
        // standard deviation at √(0.5/5).
        let sd = (0.5 / 5.0_f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = Array2::from_shape_fn((5, n), |(_, i)| {
            clean[i] + sd * rng.sample::<f64, _>(StandardNormal)
        });
        let series = FunctionalSeries::new(grid, values).unwrap();

        let lambdas: Vec<f64> = (-8..=6).map(|e| 10.0_f64.powi(e)).collect();
        let report = smooth_series(&series, &lambdas).unwrap();
        for t in 0..5 {
            let fit: Vec<f64> = report.smoothed.values().row(t).to_vec();
            let corr = pearson(&fit, &clean);
            assert!(corr > 0.99, "curve {t}: correlation {corr} too low");
        }
        // The selected weight actually smooths: away from both grid ends.
        assert!(report.lambda > 1e-8 && report.lambda < 1e6);
    }

    #[test]
    fn shared_lambda_is_the_lower_median_of_per_curve_optima() {
        let n = 120;
        let grid = Grid::uniform(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Three smooth curves and one pure-noise curve so the per-curve
        // optima are not all identical.
        let values = Array2::from_shape_fn((4, n), |(t, i)| {
            let u = grid.points()[i];
            if t < 3 {
                (2.0 * std::f64::consts::PI * u).sin()
                    + 0.2 * rng.sample::<f64, _>(StandardNormal)
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        });
        let series = FunctionalSeries::new(grid, values).unwrap();
        let lambdas: Vec<f64> = (-6..=4).map(|e| 10.0_f64.powi(e)).collect();
        let report = smooth_series(&series, &lambdas).unwrap();

        let mut sorted = report.per_curve_lambda.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(report.lambda, sorted[(sorted.len() - 1) / 2]);
        assert!(lambdas.contains(&report.lambda));
    }

    #[test]
    fn candidate_order_does_not_change_the_result() {
        let grid = Grid::uniform(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let values = Array2::from_shape_fn((3, 50), |(_, i)| {
            (6.0 * grid.points()[i]).cos() + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let series = FunctionalSeries::new(grid, values).unwrap();

        let forward = smooth_series(&series, &[1e-4, 1e-2, 1.0, 1e2]).unwrap();
        let backward = smooth_series(&series, &[1e2, 1.0, 1e-2, 1e-4, 1e-2]).unwrap();
        assert_eq!(forward.lambda, backward.lambda);
        assert_eq!(forward.smoothed.values(), backward.smoothed.values());
    }

    #[test]
    fn rejects_short_grids_and_bad_penalty_grids() {
        let grid = Grid::uniform(9).unwrap();
        let series = FunctionalSeries::new(grid, Array2::zeros((2, 9))).unwrap();
        assert!(matches!(
            smooth_series(&series, &[1.0]),
            Err(FtsxError::Precondition(_))
        ));

        let grid = Grid::uniform(20).unwrap();
        let series = FunctionalSeries::new(grid, Array2::zeros((2, 20))).unwrap();
        assert!(matches!(
            smooth_series(&series, &[]),
            Err(FtsxError::InvalidArgument(_))
        ));
        assert!(matches!(
            smooth_series(&series, &[1.0, -0.5]),
            Err(FtsxError::InvalidArgument(_))
        ));
        assert!(matches!(
            smooth_series(&series, &[f64::NAN]),
            Err(FtsxError::InvalidArgument(_))
        ));
    }

}
