//! Grid-based function representation, quadrature, inner products, and
//! orthonormalization shared by every other module.
//!
//! Curves live on a common grid of n points in [0, 1] and are stored as rows
//! of a dense matrix. All integrals over the domain use the trapezoid rule on
//! that grid, so inner products and operator discretizations stay accurate on
//! non-uniform grids; simulation metrics that are defined as plain grid sums
//! compute those sums directly and do not go through [`inner`].

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{FtsxError, Result};

/// Strictly increasing sample points in [0, 1] shared by a set of curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// Builds a grid, validating ordering and range.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FtsxError::InvalidArgument(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(FtsxError::InvalidArgument("grid points must be finite".into()));
        }
        if points[0] < 0.0 || *points.last().unwrap() > 1.0 {
            return Err(FtsxError::InvalidArgument(format!(
                "grid must lie in [0, 1], got [{}, {}]",
                points[0],
                points.last().unwrap()
            )));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FtsxError::InvalidArgument(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(Grid { points })
    }

    /// Uniform grid of n points covering [0, 1] inclusive of both endpoints.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(FtsxError::InvalidArgument(format!(
                "uniform grid needs at least 2 points, got {n}"
            )));
        }
        let step = 1.0 / (n - 1) as f64;
        Grid::new((0..n).map(|i| (i as f64 * step).min(1.0)).collect())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// T curves sampled on a common grid: row t of `values` is curve t.
#[derive(Debug, Clone)]
pub struct FunctionalSeries {
    grid: Grid,
    values: Array2<f64>,
}

impl FunctionalSeries {
    /// Wraps a T×n value matrix over `grid`, validating shape and finiteness.
    pub fn new(grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(FtsxError::InvalidArgument("series needs at least one curve".into()));
        }
        if values.ncols() != grid.n() {
            return Err(FtsxError::DimensionMismatch(format!(
                "series has {} columns but grid has {} points",
                values.ncols(),
                grid.n()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FtsxError::Numeric("series contains non-finite values".into()));
        }
        Ok(FunctionalSeries { grid, values })
    }

    /// Number of curves T.
    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Curve t as a view.
    pub fn curve(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }
}

/// An n×n covariance-type surface on a grid: entry (i, j) is c(u_i, u_j).
///
/// Lag-ℓ autocovariance surfaces with ℓ ≠ 0 are genuinely asymmetric, so
/// symmetry is not enforced at construction; consumers that require a
/// symmetric operator (eigendecomposition) check it at their boundary, and
/// the long-run estimator symmetrizes explicitly.
#[derive(Debug, Clone)]
pub struct CovSurface {
    grid: Grid,
    values: Array2<f64>,
}

impl CovSurface {
    /// Wraps an n×n surface over `grid`, validating shape and finiteness.
    pub fn new(grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.n() || values.ncols() != grid.n() {
            return Err(FtsxError::DimensionMismatch(format!(
                "surface is {}×{} but grid has {} points",
                values.nrows(),
                values.ncols(),
                grid.n()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FtsxError::Numeric("surface contains non-finite values".into()));
        }
        Ok(CovSurface { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Maximum relative asymmetry max|S − Sᵀ| / max(1, max|S|).
    pub fn asymmetry(&self) -> f64 {
        let v = &self.values;
        let mut max_diff: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..v.nrows() {
            for j in (i + 1)..v.ncols() {
                max_diff = max_diff.max((v[[i, j]] - v[[j, i]]).abs());
            }
            for j in 0..v.ncols() {
                max_abs = max_abs.max(v[[i, j]].abs());
            }
        }
        max_diff / max_abs.max(1.0)
    }
}

/// Trapezoid-rule quadrature weights for the grid; nonnegative and summing to
/// the grid span (last − first).
pub fn quad_weights(grid: &Grid) -> Array1<f64> {
    let p = grid.points();
    let n = p.len();
    let mut w = Array1::zeros(n);
    for i in 0..n - 1 {
        let half = 0.5 * (p[i + 1] - p[i]);
        w[i] += half;
        w[i + 1] += half;
    }
    w
}

/// L² inner product ⟨f, g⟩ = Σᵢ f(uᵢ) g(uᵢ) wᵢ with trapezoid weights.
pub fn inner(f: ArrayView1<'_, f64>, g: ArrayView1<'_, f64>, grid: &Grid) -> Result<f64> {
    if f.len() != grid.n() || g.len() != grid.n() {
        return Err(FtsxError::DimensionMismatch(format!(
            "inner product needs curves of length {}, got {} and {}",
            grid.n(),
            f.len(),
            g.len()
        )));
    }
    let w = quad_weights(grid);
    Ok(f.iter().zip(g.iter()).zip(w.iter()).map(|((a, b), wi)| a * b * wi).sum())
}

/// L² norm ‖f‖ = √⟨f, f⟩.
pub fn norm(f: ArrayView1<'_, f64>, grid: &Grid) -> Result<f64> {
    Ok(inner(f, f, grid)?.max(0.0).sqrt())
}

/// Gram–Schmidt orthonormalization in the quadrature inner product.
///
/// The first output is parallel to the first input and the span is preserved.
/// Runs two modified-GS sweeps so pairwise inner products land well below the
/// 1e-8 tolerance even for nearly dependent inputs. Errors if any residual
/// norm falls below 1e-12 of the corresponding input norm (rank deficiency).
pub fn gram_schmidt(basis: &[Array1<f64>], grid: &Grid) -> Result<Vec<Array1<f64>>> {
    if basis.is_empty() {
        return Err(FtsxError::InvalidArgument("gram_schmidt needs at least one curve".into()));
    }
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(basis.len());
    for (idx, b) in basis.iter().enumerate() {
        if b.len() != grid.n() {
            return Err(FtsxError::DimensionMismatch(format!(
                "basis curve {idx} has length {}, grid has {} points",
                b.len(),
                grid.n()
            )));
        }
        let input_norm = norm(b.view(), grid)?;
        let mut v = b.clone();
        // Two sweeps: the second removes the components reintroduced by
        // floating-point cancellation in the first.
        for _ in 0..2 {
            for q in &out {
                let proj = inner(v.view(), q.view(), grid)?;
                v.scaled_add(-proj, q);
            }
        }
        let residual_norm = norm(v.view(), grid)?;
        if residual_norm < 1e-12 * input_norm.max(1e-300) {
            return Err(FtsxError::Numeric(format!(
                "gram_schmidt: curve {idx} is linearly dependent on its predecessors \
                 (residual norm {residual_norm:.3e} vs input norm {input_norm:.3e})"
            )));
        }
        out.push(v / residual_norm);
    }
    Ok(out)
}

/// Splits a series into its columnwise mean curve and the centered series.
pub fn center(series: &FunctionalSeries) -> (Array1<f64>, FunctionalSeries) {
    let mean = series
        .values()
        .mean_axis(Axis(0))
        .expect("series has at least one row by construction");
    let centered = series.values() - &mean.view().insert_axis(Axis(0));
    let out = FunctionalSeries {
        grid: series.grid.clone(),
        values: centered,
    };
    (mean, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn uniform_grid(n: usize) -> Grid {
        Grid::uniform(n).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(vec![0.0]).is_err());
        assert!(Grid::new(vec![0.0, 0.0]).is_err());
        assert!(Grid::new(vec![0.5, 0.2]).is_err());
        assert!(Grid::new(vec![-0.1, 0.5]).is_err());
        assert!(Grid::new(vec![0.0, 1.1]).is_err());
        assert!(Grid::new(vec![0.0, f64::NAN]).is_err());
        assert!(Grid::new(vec![0.0, 0.3, 1.0]).is_ok());
    }

    #[test]
    fn quad_weights_equal_grid_three_points() {
        let g = Grid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let w = quad_weights(&g);
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn quad_weights_two_points() {
        let g = Grid::new(vec![0.0, 1.0]).unwrap();
        let w = quad_weights(&g);
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quad_weights_irregular_grid() {
        // Hand trapezoid on {0, 0.25, 1}: {0.125, 0.5, 0.375}.
        let g = Grid::new(vec![0.0, 0.25, 1.0]).unwrap();
        let w = quad_weights(&g);
        assert_abs_diff_eq!(w[0], 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.375, epsilon = 1e-15);
    }

    #[test]
    fn quad_weights_sum_to_span() {
        let g = Grid::new(vec![0.1, 0.3, 0.55, 0.92]).unwrap();
        let w = quad_weights(&g);
        assert_abs_diff_eq!(w.sum(), 0.92 - 0.1, epsilon = 1e-14);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn inner_constant_one() {
        let g = uniform_grid(11);
        let f = Array1::ones(11);
        assert_abs_diff_eq!(inner(f.view(), f.view(), &g).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn inner_sine_orthogonality() {
        let g = uniform_grid(1001);
        let f: Array1<f64> = g.points().iter().map(|u| (std::f64::consts::PI * u).sin()).collect();
        let h: Array1<f64> =
            g.points().iter().map(|u| (2.0 * std::f64::consts::PI * u).sin()).collect();
        assert!(inner(f.view(), h.view(), &g).unwrap().abs() < 1e-4);
    }

    #[test]
    fn inner_normalized_sine() {
        let g = uniform_grid(1001);
        let f: Array1<f64> = g
            .points()
            .iter()
            .map(|u| 2.0_f64.sqrt() * (std::f64::consts::PI * u).sin())
            .collect();
        assert_abs_diff_eq!(inner(f.view(), f.view(), &g).unwrap(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn inner_length_mismatch() {
        let g = uniform_grid(5);
        let f = Array1::ones(4);
        assert!(inner(f.view(), f.view(), &g).is_err());
    }

    #[test]
    fn gram_schmidt_normalizes_single_input() {
        let g = uniform_grid(201);
        let f: Array1<f64> = g.points().iter().map(|u| 3.0 * (std::f64::consts::PI * u).sin()).collect();
        let out = gram_schmidt(std::slice::from_ref(&f), &g).unwrap();
        assert_abs_diff_eq!(norm(out[0].view(), &g).unwrap(), 1.0, epsilon = 1e-12);
        // Parallel to the input: cosine of the angle is 1.
        let cos = inner(out[0].view(), f.view(), &g).unwrap() / norm(f.view(), &g).unwrap();
        assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_schmidt_fixed_point_on_orthonormal_inputs() {
        let g = uniform_grid(2001);
        let s2 = 2.0_f64.sqrt();
        let f1: Array1<f64> =
            g.points().iter().map(|u| s2 * (std::f64::consts::PI * u).sin()).collect();
        let f2: Array1<f64> =
            g.points().iter().map(|u| s2 * (2.0 * std::f64::consts::PI * u).sin()).collect();
        let out = gram_schmidt(&[f1.clone(), f2.clone()], &g).unwrap();
        // Quadrature makes the inputs orthonormal only to ~1e-7 on this grid,
        // so the fixed-point comparison carries that tolerance.
        for (o, f) in out.iter().zip([&f1, &f2]) {
            let diff = o - f;
            assert!(norm(diff.view(), &g).unwrap() < 1e-6);
        }
    }

    #[test]
    fn gram_schmidt_recovers_second_direction() {
        let g = uniform_grid(2001);
        let s1: Array1<f64> = g.points().iter().map(|u| (std::f64::consts::PI * u).sin()).collect();
        let s2: Array1<f64> =
            g.points().iter().map(|u| (2.0 * std::f64::consts::PI * u).sin()).collect();
        let out = gram_schmidt(&[s1.clone(), &s1 + &s2], &g).unwrap();
        // Second output should be parallel to sin(2πu).
        let cos = inner(out[1].view(), s2.view(), &g).unwrap() / norm(s2.view(), &g).unwrap();
        assert_abs_diff_eq!(cos.abs(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn gram_schmidt_pairwise_orthonormal() {
        let g = uniform_grid(501);
        let basis: Vec<Array1<f64>> = (1..=4)
            .map(|k| {
                g.points()
                    .iter()
                    .map(|u| (k as f64 * std::f64::consts::PI * u).sin() + 0.3 * u.powi(k))
                    .collect()
            })
            .collect();
        let out = gram_schmidt(&basis, &g).unwrap();
        for i in 0..out.len() {
            for j in 0..out.len() {
                let expect = if i == j { 1.0 } else { 0.0 };
                let got = inner(out[i].view(), out[j].view(), &g).unwrap();
                assert!(
                    (got - expect).abs() < 1e-8,
                    "⟨φ{i}, φ{j}⟩ = {got}, expected {expect}"
                );
            }
        }
    }

    #[test]
    fn gram_schmidt_detects_rank_deficiency() {
        let g = uniform_grid(101);
        let f: Array1<f64> = g.points().iter().map(|u| u + 1.0).collect();
        let res = gram_schmidt(&[f.clone(), f * 2.0], &g);
        assert!(res.is_err());
    }

    #[test]
    fn center_single_curve_is_zero() {
        let g = uniform_grid(4);
        let s = FunctionalSeries::new(g, array![[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (mean, centered) = center(&s);
        assert_eq!(mean.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(centered.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_two_constant_curves() {
        let g = uniform_grid(3);
        let s = FunctionalSeries::new(g, array![[1.0, 1.0, 1.0], [3.0, 3.0, 3.0]]).unwrap();
        let (mean, centered) = center(&s);
        assert!(mean.iter().all(|&m| m == 2.0));
        assert_eq!(centered.values().row(0).to_vec(), vec![-1.0, -1.0, -1.0]);
        assert_eq!(centered.values().row(1).to_vec(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn center_column_sums_vanish() {
        let g = uniform_grid(10);
        let vals = Array2::from_shape_fn((5, 10), |(t, i)| ((t * 31 + i * 17) % 13) as f64 * 0.7 - 3.0);
        let s = FunctionalSeries::new(g, vals).unwrap();
        let (_, centered) = center(&s);
        for col in centered.values().columns() {
            assert!(col.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn series_shape_validation() {
        let g = uniform_grid(3);
        assert!(FunctionalSeries::new(g.clone(), Array2::zeros((0, 3))).is_err());
        assert!(FunctionalSeries::new(g.clone(), Array2::zeros((2, 4))).is_err());
        let mut bad = Array2::zeros((2, 3));
        bad[[1, 1]] = f64::INFINITY;
        assert!(FunctionalSeries::new(g, bad).is_err());
    }

    #[test]
    fn surface_shape_validation_and_asymmetry() {
        let g = uniform_grid(2);
        assert!(CovSurface::new(g.clone(), Array2::zeros((2, 3))).is_err());
        let s = CovSurface::new(g.clone(), array![[1.0, 0.5], [0.5, 2.0]]).unwrap();
        assert_eq!(s.asymmetry(), 0.0);
        let a = CovSurface::new(g, array![[1.0, 0.7], [0.5, 2.0]]).unwrap();
        assert!(a.asymmetry() > 0.01);
    }
}
