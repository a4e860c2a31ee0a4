//! On-disk formats: CSV curve collections, the JSON feature document
//! written by extraction, and the paired CSV files carrying forecast
//! interval bounds. CSV floats are emitted with 17 significant digits and
//! JSON floats with the shortest round-trip representation, so reading a
//! file back recovers every bit and a rerun reproduces files byte for byte.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::core::{FunctionalSeries, Grid};
use crate::covariance::BandwidthReport;
use crate::error::{FtsxError, Result};
use crate::forecast::ForecastBundle;
use crate::fpca::{GlobalFeatures, Mode};
use crate::wavelet::{LocalMatrix, WaveletBasis};

/// Bumped when the feature-document layout changes incompatibly.
const FORMAT_VERSION: u32 = 1;

/// Formats a float with 17 significant digits, enough for the decimal text
/// to parse back to exactly the same `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// A curve collection as stored in a CSV file: the header row of abscissae
/// exactly as written, plus the curves over a grid normalized to [0, 1].
///
/// Headers already inside the unit interval are used verbatim as the grid;
/// anything else is mapped affinely so the first abscissa lands on 0 and the
/// last on 1. Either way `abscissae` keeps the original header values, and
/// writing puts them back untouched.
#[derive(Debug, Clone)]
pub struct CurveData {
    /// Abscissae from the file header, strictly increasing.
    pub abscissae: Vec<f64>,
    /// The curves on the normalized grid.
    pub series: FunctionalSeries,
}

impl CurveData {
    /// Pairs a series with the abscissae its file header should carry.
    pub fn new(abscissae: Vec<f64>, series: FunctionalSeries) -> Result<Self> {
        if abscissae.len() != series.grid().n() {
            return Err(FtsxError::DimensionMismatch(format!(
                "{} abscissae for a series on {} grid points",
                abscissae.len(),
                series.grid().n()
            )));
        }
        if !abscissae.iter().all(|a| a.is_finite()) {
            return Err(FtsxError::InvalidArgument(
                "abscissae must be finite".to_string(),
            ));
        }
        if abscissae.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FtsxError::InvalidArgument(
                "abscissae must be strictly increasing".to_string(),
            ));
        }
        Ok(CurveData { abscissae, series })
    }

    /// Wraps a series whose own grid points double as the file abscissae.
    pub fn from_series(series: FunctionalSeries) -> Self {
        CurveData {
            abscissae: series.grid().points().to_vec(),
            series,
        }
    }
}

/// Reads a curve CSV: header row = abscissae, each following row = one curve
/// in chronological order.
pub fn read_curves(path: impl AsRef<Path>) -> Result<CurveData> {
    parse_curves(&std::fs::read_to_string(path)?)
}

/// Parses curve CSV text. See [`read_curves`] for the layout; all parse
/// errors carry 1-based row/column coordinates into the original text.
pub fn parse_curves(text: &str) -> Result<CurveData> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let lines: Vec<&str> = text.lines().collect();
    let last_content = match lines.iter().rposition(|l| !l.trim().is_empty()) {
        Some(i) => i,
        None => {
            return Err(FtsxError::Parse {
                row: 1,
                col: 1,
                msg: "empty input".to_string(),
            })
        }
    };
    if let Some(blank) = lines[..last_content].iter().position(|l| l.trim().is_empty()) {
        return Err(FtsxError::Parse {
            row: blank + 1,
            col: 1,
            msg: "empty row".to_string(),
        });
    }

    let abscissae = parse_row(lines[0], 1, None)?;
    if abscissae.len() < 2 {
        return Err(FtsxError::Parse {
            row: 1,
            col: 1,
            msg: format!("need at least 2 grid points, got {}", abscissae.len()),
        });
    }
    if let Some(j) = abscissae.windows(2).position(|w| w[0] >= w[1]) {
        return Err(FtsxError::Parse {
            row: 1,
            col: j + 2,
            msg: "abscissae must be strictly increasing".to_string(),
        });
    }
    if last_content == 0 {
        return Err(FtsxError::Parse {
            row: 2,
            col: 1,
            msg: "no curve rows after the header".to_string(),
        });
    }

    let n = abscissae.len();
    let t_len = last_content;
    let mut values = Array2::zeros((t_len, n));
    for (t, line) in lines[1..=last_content].iter().enumerate() {
        let row = parse_row(line, t + 2, Some(n))?;
        for (i, v) in row.into_iter().enumerate() {
            values[[t, i]] = v;
        }
    }

    curves_from_buffer(abscissae, values)
}

/// Builds curve data from in-memory abscissae and a T×n value matrix, with
/// the same grid convention as the CSV reader: abscissae already inside
/// [0, 1] are used verbatim, anything else is mapped affinely onto [0, 1].
pub fn curves_from_buffer(abscissae: Vec<f64>, values: Array2<f64>) -> Result<CurveData> {
    if abscissae.len() < 2 {
        return Err(FtsxError::InvalidArgument(format!(
            "need at least 2 grid points, got {}",
            abscissae.len()
        )));
    }
    let first = abscissae[0];
    let last = abscissae[abscissae.len() - 1];
    let grid_points = if (0.0..=1.0).contains(&first) && last <= 1.0 {
        abscissae.clone()
    } else {
        abscissae.iter().map(|&x| (x - first) / (last - first)).collect()
    };
    Ok(CurveData {
        abscissae,
        series: FunctionalSeries::new(Grid::new(grid_points)?, values)?,
    })
}

/// Parses one comma-separated row of finite numbers, checking the field
/// count when `expected` is given. `row` is the 1-based file row for errors.
fn parse_row(line: &str, row: usize, expected: Option<usize>) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').collect();
    if let Some(n) = expected {
        if fields.len() != n {
            return Err(FtsxError::Parse {
                row,
                col: fields.len().min(n) + 1,
                msg: format!("expected {n} fields, got {}", fields.len()),
            });
        }
    }
    fields
        .iter()
        .enumerate()
        .map(|(j, raw)| {
            let tok = raw.trim();
            let parsed = if tok.is_empty() {
                None
            } else {
                tok.parse::<f64>().ok().filter(|v| v.is_finite())
            };
            parsed.ok_or_else(|| FtsxError::Parse {
                row,
                col: j + 1,
                msg: format!("expected a finite number, got {tok:?}"),
            })
        })
        .collect()
}

/// Writes a curve CSV with the layout [`read_curves`] expects.
pub fn write_curves(path: impl AsRef<Path>, data: &CurveData) -> Result<()> {
    if data.abscissae.len() != data.series.grid().n() {
        return Err(FtsxError::DimensionMismatch(format!(
            "{} abscissae for a series on {} grid points",
            data.abscissae.len(),
            data.series.grid().n()
        )));
    }
    std::fs::write(path, render_csv(&data.abscissae, data.series.values()))?;
    Ok(())
}

fn render_csv(header: &[f64], rows: &Array2<f64>) -> String {
    let mut out = String::new();
    push_csv_row(&mut out, header.iter().copied());
    for row in rows.rows() {
        push_csv_row(&mut out, row.iter().copied());
    }
    out
}

fn push_csv_row(out: &mut String, row: impl Iterator<Item = f64>) {
    for (j, v) in row.enumerate() {
        if j > 0 {
            out.push(',');
        }
        out.push_str(&fmt_float(v));
    }
    out.push('\n');
}

/// One retained wavelet coefficient of one curve. `level` −1 addresses the
/// approximation block at the coarsest scale; detail levels run j0..J−1,
/// each with positions 0..2^level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseCoeff {
    pub level: i32,
    pub position: usize,
    pub t: usize,
    pub value: f64,
}

/// The feature document written by extraction: everything needed to
/// reconstruct fitted curves or forecast forward without the raw input.
///
/// Matrices are stored row-wise: `eigenfunctions[k]` is the k-th basis
/// function on the grid, `scores[t]` the K̂ scores of curve t. The local
/// coefficient matrix is stored sparsely as [`SparseCoeff`] entries since
/// thresholding zeroes most of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    /// Layout version of this document.
    pub format_version: u32,
    /// Library version that wrote the document.
    pub library_version: String,
    /// Extraction mode the features came from.
    pub mode: Mode,
    /// Random seed recorded when the producing command had one.
    pub seed: Option<u64>,
    /// Abscissae of the source file header.
    pub abscissae: Vec<f64>,
    /// Normalized grid the pipeline ran on.
    pub grid: Vec<f64>,
    /// Mean curve on the grid.
    pub mean: Vec<f64>,
    /// Leading K̂ eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Selected dimension K̂.
    pub k: usize,
    /// K̂ eigenfunctions, each on the grid.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Score rows, one per curve, each of length K̂.
    pub scores: Vec<Vec<f64>>,
    /// Plug-in bandwidth diagnostics (dynamic mode only).
    pub bandwidth: Option<BandwidthReport>,
    /// Coarsest wavelet level j0.
    pub j0: u32,
    /// Dyadic length N = 2^J of the coefficient vectors.
    pub n_dyadic: usize,
    /// Per-curve noise scales σ̂_t.
    pub sigmas: Vec<f64>,
    /// Fraction of exact zeros in the dense coefficient matrix.
    pub sparsity: f64,
    /// Nonzero wavelet coefficients.
    pub coefficients: Vec<SparseCoeff>,
}

impl FeatureFile {
    /// Assembles the document from one extraction run. `abscissae` is the
    /// source file header (the series grid when there was no file).
    pub fn from_parts(
        abscissae: &[f64],
        features: &GlobalFeatures,
        bandwidth: Option<&BandwidthReport>,
        local: &LocalMatrix,
        basis: &WaveletBasis,
        seed: Option<u64>,
    ) -> Self {
        let mut coefficients = Vec::new();
        for ((r, t), &value) in local.coeffs.indexed_iter() {
            if value != 0.0 {
                let (level, position) = if r < (1usize << basis.coarsest_level()) {
                    (-1, r)
                } else {
                    let level = r.ilog2();
                    (level as i32, r - (1usize << level))
                };
                coefficients.push(SparseCoeff { level, position, t, value });
            }
        }
        FeatureFile {
            format_version: FORMAT_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            mode: features.mode,
            seed,
            abscissae: abscissae.to_vec(),
            grid: features.grid.points().to_vec(),
            mean: features.mean.to_vec(),
            eigenvalues: features.eigenvalues.clone(),
            k: features.k,
            eigenfunctions: (0..features.k)
                .map(|k| features.eigenfunctions.column(k).to_vec())
                .collect(),
            scores: (0..features.scores.nrows())
                .map(|t| features.scores.row(t).to_vec())
                .collect(),
            bandwidth: bandwidth.cloned(),
            j0: basis.coarsest_level(),
            n_dyadic: basis.n(),
            sigmas: local.sigmas.clone(),
            sparsity: local.sparsity,
            coefficients,
        }
    }

    /// The normalized grid as a validated [`Grid`].
    pub fn unit_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.clone())
    }

    /// Rebuilds the in-memory global features this document was written from.
    pub fn global_features(&self) -> Result<GlobalFeatures> {
        let grid = self.unit_grid()?;
        let n = grid.n();
        if self.mean.len() != n {
            return Err(FtsxError::DimensionMismatch(format!(
                "mean curve has {} values on a {n}-point grid",
                self.mean.len()
            )));
        }
        if self.k == 0
            || self.eigenvalues.len() != self.k
            || self.eigenfunctions.len() != self.k
        {
            return Err(FtsxError::InvalidArgument(format!(
                "inconsistent dimension: K̂ = {}, {} eigenvalues, {} eigenfunctions",
                self.k,
                self.eigenvalues.len(),
                self.eigenfunctions.len()
            )));
        }
        if self.eigenfunctions.iter().any(|f| f.len() != n) {
            return Err(FtsxError::DimensionMismatch(
                "eigenfunction length differs from the grid".to_string(),
            ));
        }
        if self.scores.is_empty() || self.scores.iter().any(|s| s.len() != self.k) {
            return Err(FtsxError::InvalidArgument(
                "score rows must be nonempty and K̂ wide".to_string(),
            ));
        }
        let eigenfunctions =
            Array2::from_shape_fn((n, self.k), |(i, k)| self.eigenfunctions[k][i]);
        let scores =
            Array2::from_shape_fn((self.scores.len(), self.k), |(t, k)| self.scores[t][k]);
        Ok(GlobalFeatures {
            mean: Array1::from_vec(self.mean.clone()),
            k: self.k,
            eigenfunctions,
            eigenvalues: self.eigenvalues.clone(),
            scores,
            mode: self.mode,
            grid,
        })
    }

    /// The wavelet basis matching the stored dyadic length and j0.
    pub fn basis(&self) -> Result<WaveletBasis> {
        WaveletBasis::for_signal_len(self.n_dyadic, self.j0)
    }

    /// Expands the sparse coefficient entries into the dense N×T matrix.
    pub fn coeff_matrix(&self) -> Result<Array2<f64>> {
        let basis = self.basis()?;
        let depth = basis.depth();
        let t_len = self.scores.len();
        if t_len == 0 {
            return Err(FtsxError::InvalidArgument(
                "document stores no curves".to_string(),
            ));
        }
        let mut dense = Array2::zeros((self.n_dyadic, t_len));
        let mut seen = Array2::from_elem((self.n_dyadic, t_len), false);
        for c in &self.coefficients {
            let row = match c.level {
                -1 => {
                    if c.position >= (1usize << self.j0) {
                        return Err(FtsxError::InvalidArgument(format!(
                            "approximation position {} exceeds block size {}",
                            c.position,
                            1usize << self.j0
                        )));
                    }
                    c.position
                }
                level if level >= self.j0 as i32 && (level as u32) < depth => {
                    if c.position >= (1usize << level) {
                        return Err(FtsxError::InvalidArgument(format!(
                            "position {} exceeds level {level} size {}",
                            c.position,
                            1usize << level
                        )));
                    }
                    (1usize << level) + c.position
                }
                level => {
                    return Err(FtsxError::InvalidArgument(format!(
                        "coefficient level {level} outside −1 and {}..{}",
                        self.j0,
                        depth - 1
                    )));
                }
            };
            if c.t >= t_len {
                return Err(FtsxError::InvalidArgument(format!(
                    "coefficient time index {} exceeds T = {t_len}",
                    c.t
                )));
            }
            if seen[[row, c.t]] {
                return Err(FtsxError::InvalidArgument(format!(
                    "duplicate coefficient entry at level {}, position {}, t {}",
                    c.level, c.position, c.t
                )));
            }
            seen[[row, c.t]] = true;
            dense[[row, c.t]] = c.value;
        }
        Ok(dense)
    }
}

/// Writes the feature document as pretty-printed JSON.
pub fn write_features(path: impl AsRef<Path>, file: &FeatureFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a feature document written by [`write_features`].
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Paths of the paired interval files accompanying a point-forecast file:
/// `fc.csv` → (`fc.lower.csv`, `fc.upper.csv`).
pub fn interval_paths(point_path: &Path) -> (PathBuf, PathBuf) {
    let tagged = |tag: &str| match point_path.extension().and_then(|e| e.to_str()) {
        Some(ext) => point_path.with_extension(format!("{tag}.{ext}")),
        None => point_path.with_extension(tag),
    };
    (tagged("lower"), tagged("upper"))
}

/// Writes forecast curves: point forecasts to `path` (one row per horizon
/// step), and — when the bundle carries interval bounds — the lower and
/// upper curves to the paths from [`interval_paths`]. Returns those two
/// paths when written.
pub fn write_forecast(
    path: impl AsRef<Path>,
    abscissae: &[f64],
    bundle: &ForecastBundle,
) -> Result<Option<(PathBuf, PathBuf)>> {
    let path = path.as_ref();
    if abscissae.len() != bundle.point.ncols() {
        return Err(FtsxError::DimensionMismatch(format!(
            "{} abscissae for forecast curves on {} points",
            abscissae.len(),
            bundle.point.ncols()
        )));
    }
    std::fs::write(path, render_csv(abscissae, &bundle.point))?;
    match &bundle.intervals {
        Some(iv) => {
            let (lower_path, upper_path) = interval_paths(path);
            std::fs::write(&lower_path, render_csv(abscissae, &iv.lower))?;
            std::fs::write(&upper_path, render_csv(abscissae, &iv.upper))?;
            Ok(Some((lower_path, upper_path)))
        }
        None => Ok(None),
    }
}
