//! Feature extraction, forecasting, and simulation for functional time
//! series.
//!
//! The pipeline decomposes a series of curves into three additive parts:
//! a mean curve plus a small number of smooth global components obtained by
//! functional principal component analysis of the long-run (or lag-0)
//! covariance operator; sparse local features recovered from the FPCA
//! residuals by wavelet block thresholding; and noise. Scores and wavelet
//! coefficients are forecast with univariate autoregressions to produce
//! point and interval forecasts of whole curves.
//!
//! Module map:
//! - [`core`]: grids, curve containers, quadrature, inner products.
//! - [`covariance`]: autocovariance surfaces, kernel weights, plug-in
//!   bandwidth, long-run covariance estimation.
//! - [`fpca`]: operator eigendecomposition, dimension selection, scores.
//! - [`wavelet`]: orthogonal DWT, nondyadic-grid interpolation, noise
//!   estimation, two-round block thresholding.
//! - [`forecast`]: autoregressive modeling of scores and coefficients,
//!   curve forecasts, interval calibration.
//! - [`simulate`]: data-generating processes, evaluation metrics, seeded
//!   replication runners.
//! - [`smooth`]: penalized B-spline smoother for raw input curves.
//! - [`io`]: CSV curve files, JSON feature files and reports.

pub mod core;
pub mod covariance;
pub mod error;
pub mod forecast;
pub mod fpca;
pub mod io;
pub mod simulate;
pub mod smooth;
pub mod wavelet;

pub use error::{FtsxError, Result};
