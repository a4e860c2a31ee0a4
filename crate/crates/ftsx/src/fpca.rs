//! Functional principal component analysis of a covariance surface:
//! operator eigendecomposition on the quadrature-weighted grid, eigenvalue-
//! ratio dimension selection, score computation, reconstruction, residuals.
//!
//! "Dynamic" mode decomposes the long-run covariance operator so the leading
//! directions reflect serial dependence; "static" mode decomposes the lag-0
//! sample covariance, appropriate for serially independent curves.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::core::{center, inner, quad_weights, CovSurface, FunctionalSeries, Grid};
use crate::covariance::{long_run_cov, static_cov, BandwidthReport};
use crate::error::{FtsxError, Result};

/// Which covariance operator drives the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Long-run covariance (kernel-weighted lag aggregation).
    Dynamic,
    /// Lag-0 sample covariance.
    Static,
}

impl FromStr for Mode {
    type Err = FtsxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(Mode::Dynamic),
            "static" => Ok(Mode::Static),
            other => Err(FtsxError::InvalidArgument(format!(
                "mode must be \"dynamic\" or \"static\", got \"{other}\""
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Dynamic => "dynamic",
            Mode::Static => "static",
        })
    }
}

/// Eigenpairs of a discretized covariance operator.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Nonincreasing eigenvalues with negatives clipped to 0.
    pub eigenvalues: Vec<f64>,
    /// n×m matrix; column k is the eigenfunction φ̂_k on the grid, normalized
    /// to unit L² norm under trapezoid quadrature.
    pub eigenfunctions: Array2<f64>,
    /// Sum of the eigenvalues before clipping; equals the operator trace
    /// ∫C(u,u)du up to quadrature error.
    pub raw_eigenvalue_sum: f64,
    pub grid: Grid,
}

/// FPCA output: mean curve, selected dimension, and per-curve scores.
#[derive(Debug, Clone)]
pub struct GlobalFeatures {
    pub mean: Array1<f64>,
    /// Selected dimension K ≥ 1.
    pub k: usize,
    /// n×K eigenfunction matrix.
    pub eigenfunctions: Array2<f64>,
    /// Leading K eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// T×K score matrix; column k holds β̂_{t,k} = ⟨X_t − μ̂, φ̂_k⟩.
    pub scores: Array2<f64>,
    pub mode: Mode,
    pub grid: Grid,
}

/// Solves the discretized operator eigenproblem for a symmetric surface.
///
/// With Q = diag(quadrature weights), the L² operator eigenproblem on the
/// grid is equivalent to the symmetric matrix problem for Q^{1/2}·C·Q^{1/2};
/// eigenvectors are rescaled by Q^{−1/2} so the eigenfunctions have unit L²
/// norm. Each eigenfunction is flipped so its entry of largest magnitude is
/// positive, making signs reproducible across runs.
pub fn eigendecompose(surface: &CovSurface) -> Result<EigenSystem> {
    if surface.asymmetry() > 1e-10 {
        return Err(FtsxError::InvalidArgument(format!(
            "eigendecomposition needs a symmetric surface; relative asymmetry {:.3e}",
            surface.asymmetry()
        )));
    }
    let n = surface.grid().n();
    let w = quad_weights(surface.grid());
    let sqrt_w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let v = surface.values();
    // B = Q^{1/2} C Q^{1/2}, symmetrized exactly against rounding in C.
    let b = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (v[[i, j]] + v[[j, i]]) * sqrt_w[i] * sqrt_w[j]
    });
    let eig = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues of a finite symmetric matrix are finite")
    });

    let raw_sum = eig.eigenvalues.iter().sum();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenfunctions = Array2::zeros((n, n));
    for (col, &idx) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        // Rescale by Q^{−1/2} and fix the sign.
        let mut phi: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, idx)] / sqrt_w[i]).collect();
        let mut max_abs = 0.0;
        let mut max_val = 0.0;
        for &x in &phi {
            if x.abs() > max_abs {
                max_abs = x.abs();
                max_val = x;
            }
        }
        if max_val < 0.0 {
            for x in &mut phi {
                *x = -*x;
            }
        }
        for i in 0..n {
            eigenfunctions[[i, col]] = phi[i];
        }
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenfunctions,
        raw_eigenvalue_sum: raw_sum,
        grid: surface.grid().clone(),
    })
}

/// Eigenvalue-ratio dimension selector.
///
/// Over k = 1..k_max, minimizes λ̂_{k+1}/λ̂_k among components whose relative
/// size λ̂_k/λ̂₁ clears the threshold τ = 1/ln(max(λ̂₁, T)); components below
/// the threshold contribute objective value 1, so a spuriously tiny ratio
/// between two negligible eigenvalues cannot win. k_max counts eigenvalues at
/// least as large as the mean of the leading T' = min(T, #positive), capped
/// at one below the available count so the ratio always has a successor.
/// Ties break toward the smallest k.
pub fn select_k(eigenvalues: &[f64], t: usize) -> Result<usize> {
    if eigenvalues.len() < 2 {
        return Err(FtsxError::Precondition(format!(
            "dimension selection needs at least 2 eigenvalues, got {}",
            eigenvalues.len()
        )));
    }
    if t < 2 {
        return Err(FtsxError::Precondition(format!(
            "dimension selection needs T ≥ 2, got {t}"
        )));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(FtsxError::InvalidArgument("eigenvalues must be nonincreasing".into()));
    }
    let lambda1 = eigenvalues[0];
    if lambda1.is_nan() || lambda1 <= 0.0 {
        return Err(FtsxError::Precondition("all eigenvalues are zero".into()));
    }
    let positive = eigenvalues.iter().filter(|&&l| l > 0.0).count();
    let t_prime = t.min(positive);
    let mean: f64 = eigenvalues[..t_prime].iter().sum::<f64>() / t_prime as f64;
    let k_max = eigenvalues
        .iter()
        .take_while(|&&l| l >= mean)
        .count()
        .min(eigenvalues.len() - 1)
        .max(1);

    let tau = 1.0 / lambda1.max(t as f64).ln();
    let mut best_k = 1;
    let mut best_obj = f64::INFINITY;
    for k in 1..=k_max {
        let lam_k = eigenvalues[k - 1];
        let obj = if lam_k / lambda1 >= tau {
            eigenvalues[k] / lam_k
        } else {
            1.0
        };
        if obj < best_obj {
            best_obj = obj;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Runs the full FPCA stage: center, estimate the covariance operator for
/// `mode`, decompose, select the dimension, and project the centered curves
/// onto the leading eigenfunctions. The bandwidth report is returned in
/// dynamic mode only.
pub fn extract_global(
    series: &FunctionalSeries,
    mode: Mode,
) -> Result<(GlobalFeatures, Option<BandwidthReport>)> {
    let t = series.t_len();
    let min_t = match mode {
        Mode::Dynamic => 4,
        Mode::Static => 2,
    };
    if t < min_t {
        return Err(FtsxError::Precondition(format!(
            "{mode} extraction needs at least {min_t} curves, got {t}"
        )));
    }
    let (mean, centered) = center(series);
    let (surface, report) = match mode {
        Mode::Dynamic => {
            let (s, r) = long_run_cov(series)?;
            (s, Some(r))
        }
        Mode::Static => (static_cov(series)?, None),
    };
    let eig = eigendecompose(&surface)?;
    let k = select_k(&eig.eigenvalues, t)?;

    let phi = eig.eigenfunctions.slice(ndarray::s![.., ..k]).to_owned();
    let scores = project_scores(&centered, &phi);
    Ok((
        GlobalFeatures {
            mean,
            k,
            eigenfunctions: phi,
            eigenvalues: eig.eigenvalues[..k].to_vec(),
            scores,
            mode,
            grid: series.grid().clone(),
        },
        report,
    ))
}

/// Quadrature projection of centered curves onto eigenfunctions:
/// scores = X_c · Q · Φ.
fn project_scores(centered: &FunctionalSeries, phi: &Array2<f64>) -> Array2<f64> {
    let w = quad_weights(centered.grid());
    let weighted_phi = phi * &w.view().insert_axis(Axis(1));
    centered.values().dot(&weighted_phi)
}

/// Rebuilds curves from features: row t = μ̂ + Σ_k β̂_{t,k}·φ̂_k.
pub fn reconstruct(features: &GlobalFeatures) -> Result<FunctionalSeries> {
    let recon = &features.scores.dot(&features.eigenfunctions.t())
        + &features.mean.view().insert_axis(Axis(0));
    FunctionalSeries::new(features.grid.clone(), recon)
}

/// Residual curves ê_t = X_t − μ̂ − Σ_k β̂_{t,k}·φ̂_k.
pub fn residuals(series: &FunctionalSeries, features: &GlobalFeatures) -> Result<FunctionalSeries> {
    if series.grid() != &features.grid {
        return Err(FtsxError::DimensionMismatch(
            "series and features live on different grids".into(),
        ));
    }
    if series.t_len() != features.scores.nrows() {
        return Err(FtsxError::DimensionMismatch(format!(
            "series has {} curves but features carry {} score rows",
            series.t_len(),
            features.scores.nrows()
        )));
    }
    let recon = reconstruct(features)?;
    FunctionalSeries::new(series.grid().clone(), series.values() - recon.values())
}

/// Convenience for tests and diagnostics: ⟨f, φ̂_k⟩ for every retained k.
pub fn project_curve(features: &GlobalFeatures, f: ndarray::ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    (0..features.k)
        .map(|k| inner(f, features.eigenfunctions.column(k), &features.grid))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{gram_schmidt, norm};
    use crate::covariance::surface_diag_integral;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unit_sine(grid: &Grid, k: usize) -> Array1<f64> {
        let f: Array1<f64> =
            grid.points().iter().map(|u| (k as f64 * PI * u).sin()).collect();
        let n = norm(f.view(), grid).unwrap();
        f / n
    }

    fn rank_surface(grid: &Grid, parts: &[(f64, &Array1<f64>)]) -> CovSurface {
        let n = grid.n();
        let mut v = Array2::zeros((n, n));
        for (lam, phi) in parts {
            for i in 0..n {
                for j in 0..n {
                    v[[i, j]] += lam * phi[i] * phi[j];
                }
            }
        }
        CovSurface::new(grid.clone(), v).unwrap()
    }

    #[test]
    fn rank_one_mercer_recovery() {
        let g = Grid::uniform(201).unwrap();
        let phi = unit_sine(&g, 1);
        let eig = eigendecompose(&rank_surface(&g, &[(1.0, &phi)])).unwrap();
        assert_abs_diff_eq!(eig.eigenvalues[0], 1.0, epsilon = 1e-6);
        assert!(eig.eigenvalues[1].abs() < 1e-8);
        // sin(πu) is positive inside the interval, so the sign convention
        // returns +φ.
        let diff = &eig.eigenfunctions.column(0).to_owned() - &phi;
        assert!(norm(diff.view(), &g).unwrap() < 1e-6);
    }

    #[test]
    fn two_component_spectrum() {
        let g = Grid::uniform(301).unwrap();
        let basis = gram_schmidt(&[unit_sine(&g, 1), unit_sine(&g, 2)], &g).unwrap();
        let eig =
            eigendecompose(&rank_surface(&g, &[(1.0, &basis[0]), (2.0, &basis[1])])).unwrap();
        assert_abs_diff_eq!(eig.eigenvalues[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(eig.eigenvalues[1], 1.0, epsilon = 1e-6);
        assert!(eig.eigenvalues[2].abs() < 1e-8);
    }

    #[test]
    fn eigenfunctions_quadrature_orthonormal() {
        let g = Grid::uniform(101).unwrap();
        // A full-rank symmetric surface with decaying off-diagonal structure.
        let n = g.n();
        let v = Array2::from_shape_fn((n, n), |(i, j)| {
            let (u, s) = (g.points()[i], g.points()[j]);
            (-((u - s) * (u - s)) * 8.0).exp() + 0.5 * u.min(s)
        });
        let eig = eigendecompose(&CovSurface::new(g.clone(), v).unwrap()).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let expect = if a == b { 1.0 } else { 0.0 };
                let got = inner(
                    eig.eigenfunctions.column(a),
                    eig.eigenfunctions.column(b),
                    &g,
                )
                .unwrap();
                assert!(
                    (got - expect).abs() < 1e-8,
                    "⟨φ{a}, φ{b}⟩ = {got}, expected {expect}"
                );
            }
        }
    }

    #[test]
    fn trace_identity() {
        let g = Grid::uniform(81).unwrap();
        let n = g.n();
        let v = Array2::from_shape_fn((n, n), |(i, j)| {
            let (u, s) = (g.points()[i], g.points()[j]);
            u.min(s) + 0.2 * (PI * u).cos() * (PI * s).cos()
        });
        let surf = CovSurface::new(g, v).unwrap();
        let eig = eigendecompose(&surf).unwrap();
        let trace = surface_diag_integral(&surf);
        assert!((eig.raw_eigenvalue_sum - trace).abs() < 1e-6 * trace.abs());
    }

    #[test]
    fn eigendecompose_rejects_asymmetry() {
        let g = Grid::uniform(3).unwrap();
        let mut v = Array2::zeros((3, 3));
        v[[0, 1]] = 1.0;
        let surf = CovSurface::new(g, v).unwrap();
        assert!(eigendecompose(&surf).is_err());
    }

    #[test]
    fn negative_eigenvalues_clipped() {
        // An indefinite symmetric surface: eigenvalues of both signs.
        let g = Grid::new(vec![0.0, 1.0]).unwrap();
        let v = ndarray::array![[0.0, 1.0], [1.0, 0.0]];
        let eig = eigendecompose(&CovSurface::new(g, v).unwrap()).unwrap();
        assert!(eig.eigenvalues.iter().all(|&l| l >= 0.0));
        assert!(eig.eigenvalues[1] == 0.0);
        // Raw sum keeps the negative part: trace of the surface is 0.
        assert_abs_diff_eq!(eig.raw_eigenvalue_sum, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn select_k_hand_example() {
        // τ = 1/ln 100 ≈ 0.217; ratio objective {0.5, 0.002, …} → K̂ = 2.
        assert_eq!(select_k(&[10.0, 5.0, 0.01, 0.005], 100).unwrap(), 2);
    }

    #[test]
    fn select_k_single_dominant() {
        assert_eq!(select_k(&[1.0, 1e-9], 100).unwrap(), 1);
    }

    #[test]
    fn select_k_validates_input() {
        assert!(select_k(&[1.0], 100).is_err());
        assert!(select_k(&[0.0, 0.0], 100).is_err());
        assert!(select_k(&[1.0, 2.0], 100).is_err());
        assert!(select_k(&[1.0, 0.5], 1).is_err());
    }

    #[test]
    fn select_k_scale_invariant_below_t() {
        // Both λ̂₁ and c·λ̂₁ stay below T, so τ depends on T alone and the
        // ratio terms are scale-free.
        let lam = [3.0, 1.5, 0.01, 0.002];
        let scaled: Vec<f64> = lam.iter().map(|l| l * 7.0).collect();
        assert_eq!(select_k(&lam, 100).unwrap(), select_k(&scaled, 100).unwrap());
    }

    #[test]
    fn extract_global_exact_rank_one() {
        let g = Grid::uniform(101).unwrap();
        let phi = unit_sine(&g, 1);
        let t = 30;
        let mut vals = Array2::zeros((t, g.n()));
        for ti in 0..t {
            let beta = (ti as f64 * 0.77).sin() * 3.0;
            for i in 0..g.n() {
                vals[[ti, i]] = 1.0 + beta * phi[i]; // mean curve ≡ 1
            }
        }
        let series = FunctionalSeries::new(g.clone(), vals).unwrap();
        let (features, report) = extract_global(&series, Mode::Static).unwrap();
        assert!(report.is_none());
        assert_eq!(features.k, 1);
        let recon = reconstruct(&features).unwrap();
        for ti in 0..t {
            let diff = &series.curve(ti).to_owned() - &recon.curve(ti);
            assert!(norm(diff.view(), &g).unwrap() < 1e-6);
        }
    }

    #[test]
    fn scores_match_independent_projection() {
        let g = Grid::uniform(64).unwrap();
        let vals = Array2::from_shape_fn((12, 64), |(t, i)| {
            ((t + 1) as f64 * 0.3).sin() * (PI * g.points()[i]).sin()
                + 0.1 * ((t * i) % 5) as f64
        });
        let series = FunctionalSeries::new(g.clone(), vals).unwrap();
        let (features, _) = extract_global(&series, Mode::Static).unwrap();
        let (mean, _) = center(&series);
        for t in 0..series.t_len() {
            let centered = &series.curve(t).to_owned() - &mean;
            let proj = project_curve(&features, centered.view()).unwrap();
            for (k, &p) in proj.iter().enumerate() {
                assert_abs_diff_eq!(features.scores[[t, k]], p, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn score_columns_have_zero_mean() {
        let g = Grid::uniform(32).unwrap();
        let vals = Array2::from_shape_fn((20, 32), |(t, i)| {
            (t as f64 * 0.9).cos() * (i as f64 * 0.2).sin() + (t % 3) as f64
        });
        let series = FunctionalSeries::new(g, vals).unwrap();
        let (features, _) = extract_global(&series, Mode::Static).unwrap();
        let max_score = features.scores.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
        for k in 0..features.k {
            let mean = features.scores.column(k).mean().unwrap();
            assert!(mean.abs() <= 1e-8 * max_score.max(1e-300));
        }
    }

    #[test]
    fn reconstruct_zero_scores_gives_mean() {
        let g = Grid::uniform(16).unwrap();
        let features = GlobalFeatures {
            mean: Array1::from_elem(16, 2.5),
            k: 1,
            eigenfunctions: Array2::ones((16, 1)),
            eigenvalues: vec![1.0],
            scores: Array2::zeros((4, 1)),
            mode: Mode::Static,
            grid: g,
        };
        let recon = reconstruct(&features).unwrap();
        assert!(recon.values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn residuals_orthogonal_and_additive() {
        let g = Grid::uniform(96).unwrap();
        let vals = Array2::from_shape_fn((15, 96), |(t, i)| {
            let u = g.points()[i];
            (t as f64 * 0.5).sin() * (PI * u).sin()
                + 0.3 * (t as f64 * 1.1).cos() * (2.0 * PI * u).sin()
                + ((t * 31 + i * 7) % 11) as f64 * 0.01
        });
        let series = FunctionalSeries::new(g.clone(), vals).unwrap();
        let (features, _) = extract_global(&series, Mode::Static).unwrap();
        let res = residuals(&series, &features).unwrap();
        // Projection property: residuals orthogonal to retained directions.
        for t in 0..series.t_len() {
            for k in 0..features.k {
                let ip = inner(res.curve(t), features.eigenfunctions.column(k), &g).unwrap();
                assert!(ip.abs() < 1e-8, "⟨ê_{t}, φ̂_{k}⟩ = {ip}");
            }
        }
        // Additivity: reconstruction + residuals returns the original up to
        // one rounding step of the subtraction that defined the residuals.
        let recon = reconstruct(&features).unwrap();
        let sum = recon.values() + res.values();
        let max_diff = (&sum - series.values()).iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-12);
    }

    #[test]
    fn reconstruction_rank_bounded_by_k() {
        let g = Grid::uniform(24).unwrap();
        let vals = Array2::from_shape_fn((10, 24), |(t, i)| {
            (t as f64 + 1.0).ln() * (i as f64 * 0.4).sin() + 0.5 * (t as f64 * 0.8).cos()
        });
        let series = FunctionalSeries::new(g, vals).unwrap();
        let (features, _) = extract_global(&series, Mode::Static).unwrap();
        let recon = reconstruct(&features).unwrap();
        let (_, centered) = center(&recon);
        let m = DMatrix::from_fn(10, 24, |i, j| centered.values()[[i, j]]);
        let svals = m.singular_values();
        for i in features.k..svals.len() {
            assert!(svals[i] < 1e-10, "singular value {i} = {}", svals[i]);
        }
    }

    #[test]
    fn dynamic_mode_needs_four_curves() {
        let g = Grid::uniform(8).unwrap();
        let vals = Array2::from_shape_fn((3, 8), |(t, i)| (t * i) as f64);
        let series = FunctionalSeries::new(g, vals).unwrap();
        assert!(extract_global(&series, Mode::Dynamic).is_err());
    }
}
