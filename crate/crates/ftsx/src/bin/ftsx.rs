//! Command-line surface: feature extraction, forecasting, Monte Carlo
//! simulation, and penalized-spline smoothing over CSV/JSON files.
//!
//! Every command is deterministic given its flags (plus `--seed` where one
//! exists): rerunning writes byte-identical files. Exit codes: 0 success,
//! 2 unreadable or malformed input, 3 violated preconditions, 4 numeric
//! failure. The environment variable `FTSX_THREADS` caps the worker count.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use ftsx::forecast::calibrate_intervals;
use ftsx::fpca::{extract_global, residuals, Mode};
use ftsx::io::{
    fmt_float, read_curves, read_features, write_curves, write_features, write_forecast,
    CurveData, FeatureFile,
};
use ftsx::simulate::{run_experiment, Experiment, ExperimentConfig, MetricsReport};
use ftsx::smooth::smooth_series;
use ftsx::wavelet::{build_nrsi, local_matrix, WaveletBasis};
use ftsx::{FtsxError, Result};

#[derive(Parser)]
#[command(
    name = "ftsx",
    version,
    about = "Feature extraction, forecasting, and simulation for functional time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract global and local features from a curve CSV into a JSON document
    Extract {
        /// Curve CSV: header row = abscissae, one row per curve
        #[arg(long)]
        input: PathBuf,
        /// Covariance mode driving the decomposition: dynamic or static
        #[arg(long, default_value = "dynamic")]
        mode: String,
        /// Coarsest wavelet level
        #[arg(long, default_value_t = 3)]
        j0: u32,
        /// Feature document to write (JSON)
        #[arg(long)]
        output: PathBuf,
    },
    /// Forecast curves from an extracted feature document
    Forecast {
        /// Feature document written by `extract`
        #[arg(long)]
        features: PathBuf,
        /// The curve CSV the features were extracted from
        #[arg(long)]
        input: PathBuf,
        /// Number of steps ahead to forecast
        #[arg(long)]
        horizon: usize,
        /// Nominal coverage of the prediction intervals, in (0,1)
        #[arg(long, default_value_t = 0.8)]
        coverage: f64,
        /// Point-forecast CSV to write; interval bounds go to companion
        /// .lower/.upper files
        #[arg(long)]
        output: PathBuf,
    },
    /// Run a Monte Carlo experiment and write a metrics report
    Simulate {
        /// Which experiment: 1|2|3 (or exp1|exp2|forecast)
        #[arg(long)]
        experiment: String,
        /// Comma-separated sample sizes T, one run per size
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Replications per run
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Master seed; replication r uses stream r of this seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Covariance mode for the extraction step: dynamic or static
        #[arg(long, default_value = "dynamic")]
        mode: String,
        /// Report CSV to write; a JSON copy goes alongside it
        #[arg(long)]
        output: PathBuf,
    },
    /// Smooth curves by penalized B-spline least squares with GCV
    Smooth {
        /// Curve CSV to smooth
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated candidate penalty weights
        #[arg(long, value_delimiter = ',', required = true)]
        lambda_grid: Vec<f64>,
        /// Smoothed curve CSV to write
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    init_thread_pool()?;
    match command {
        Command::Extract { input, mode, j0, output } => cmd_extract(&input, &mode, j0, &output),
        Command::Forecast { features, input, horizon, coverage, output } => {
            cmd_forecast(&features, &input, horizon, coverage, &output)
        }
        Command::Simulate { experiment, sizes, reps, seed, mode, output } => {
            cmd_simulate(&experiment, &sizes, reps, seed, &mode, &output)
        }
        Command::Smooth { input, lambda_grid, output } => {
            cmd_smooth(&input, &lambda_grid, &output)
        }
    }
}

/// Applies the FTSX_THREADS cap to the global worker pool, if set.
fn init_thread_pool() -> Result<()> {
    let raw = match std::env::var("FTSX_THREADS") {
        Ok(raw) => raw,
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(e) => {
            return Err(FtsxError::InvalidArgument(format!("FTSX_THREADS: {e}")));
        }
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            FtsxError::InvalidArgument(format!(
                "FTSX_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| FtsxError::InvalidArgument(format!("worker pool setup failed: {e}")))
}

fn cmd_extract(input: &Path, mode_raw: &str, j0: u32, output: &Path) -> Result<()> {
    let mode: Mode = mode_raw.parse()?;
    let data = read_curves(input)?;
    println!(
        "read {} curves on {} grid points",
        data.series.t_len(),
        data.series.grid().n()
    );

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
    write_features(output, &doc)?;

    println!("selected dimension K = {} ({mode} mode)", features.k);
    if let Some(bw) = &doc.bandwidth {
        println!(
            "plug-in bandwidth h_opt = {:.6} ({} lags aggregated)",
            bw.h_opt, bw.lags_used
        );
    }
    let mut sigmas = doc.sigmas.clone();
    sigmas.sort_by(f64::total_cmp);
    println!(
        "noise scale sigma-hat per curve: min {:.6}, median {:.6}, max {:.6}",
        sigmas[0],
        sigmas[(sigmas.len() - 1) / 2],
        sigmas[sigmas.len() - 1]
    );
    println!(
        "coefficient sparsity: {:.1}% zeros ({} retained)",
        doc.sparsity * 100.0,
        doc.coefficients.len()
    );
    println!("wrote {}", output.display());
    Ok(())
}

fn cmd_forecast(
    features_path: &Path,
    input: &Path,
    horizon: usize,
    coverage: f64,
    output: &Path,
) -> Result<()> {
    if horizon < 1 {
        return Err(FtsxError::InvalidArgument(
            "forecast horizon must be at least 1".to_string(),
        ));
    }
    let doc = read_features(features_path)?;
    let data = read_curves(input)?;
    let features = doc.global_features()?;
    if data.series.grid() != &features.grid {
        return Err(FtsxError::DimensionMismatch(
            "input grid is incompatible with the feature document".to_string(),
        ));
    }
    let basis = doc.basis()?;
    let map = build_nrsi(&features.grid, &basis)?;
    let coeffs = doc.coeff_matrix()?;
    let bundle = calibrate_intervals(
        &features,
        &coeffs,
        &map,
        &basis,
        &data.series,
        horizon,
        coverage,
    )?;

    let companions = write_forecast(output, &data.abscissae, &bundle)?;
    if let Some(iv) = &bundle.intervals {
        println!(
            "interval calibration pi = {:.6} (in-sample coverage {:.3} at nominal {:.3})",
            iv.scale, iv.achieved_coverage, iv.nominal_coverage
        );
    }
    println!("wrote {}", output.display());
    if let Some((lower, upper)) = companions {
        println!("wrote {}", lower.display());
        println!("wrote {}", upper.display());
    }
    Ok(())
}

fn cmd_simulate(
    experiment_raw: &str,
    sizes: &[usize],
    reps: usize,
    seed: u64,
    mode_raw: &str,
    output: &Path,
) -> Result<()> {
    let experiment: Experiment = experiment_raw.parse()?;
    let mode: Mode = mode_raw.parse()?;

    let mut reports: Vec<MetricsReport> = Vec::with_capacity(sizes.len());
    for &t_len in sizes {
        let config = ExperimentConfig::with_default_grid(experiment, t_len, reps, seed, mode);
        let report = run_experiment(&config)?;
        println!(
            "{experiment} T={t_len} ({} reps, {mode} mode, {:.2}s):",
            reps, report.runtime_seconds
        );
        for metric in &report.metrics {
            println!("  {}: mean {:.6}, sd {:.6}", metric.name, metric.mean, metric.sd);
        }
        reports.push(report);
    }

    let (csv_path, json_path) = report_paths(output);
    let mut csv = String::from("experiment,mode,t_len,n_grid,reps,seed,metric,mean,sd\n");
    for report in &reports {
        for metric in &report.metrics {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                report.experiment,
                report.mode,
                report.t_len,
                report.n_grid,
                report.reps,
                report.seed,
                metric.name,
                fmt_float(metric.mean),
                fmt_float(metric.sd)
            ));
        }
    }
    std::fs::write(&csv_path, csv)?;
    let mut json = serde_json::to_string_pretty(&reports)
        .map_err(FtsxError::Serialize)?;
    json.push('\n');
    std::fs::write(&json_path, json)?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", json_path.display());
    Ok(())
}

/// The CSV goes to the given path and the JSON copy alongside it; when the
/// caller hands a `.json` path the roles swap so neither file overwrites
/// the other.
fn report_paths(output: &Path) -> (PathBuf, PathBuf) {
    let json = output.with_extension("json");
    if json == output {
        (output.with_extension("csv"), json)
    } else {
        (output.to_path_buf(), json)
    }
}

fn cmd_smooth(input: &Path, lambda_grid: &[f64], output: &Path) -> Result<()> {
    let data = read_curves(input)?;
    let report = smooth_series(&data.series, lambda_grid)?;
    write_curves(output, &CurveData::new(data.abscissae, report.smoothed)?)?;
    println!(
        "selected penalty lambda = {:e} (median of {} per-curve optima)",
        report.lambda,
        report.per_curve_lambda.len()
    );
    println!("wrote {}", output.display());
    Ok(())
}
