//! End-to-end experiments: forward synthesis, inversion, metric recovery and
//! the comparison against the forward truth, all through files in one output
//! directory.
//!
//! The forward truth lives in `truth/` and only [`run_report`] opens it; the
//! inversion reads nothing but `grid.csv`.

mod config;
mod report;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::catalog::{normalize, CATALOG_IDS};
use crate::error::{DixError, Result};
use crate::forward::{read_curve_csv, read_grid_csv, synthesize_sphere_data, write_curve_csv, write_grid_csv, CurvatureCurve, SphereDataGrid};
use crate::geodesic::{integrate_geodesic, GeodesicOptions};
use crate::inverse::{
    estimate_curvature_on_i0, estimate_curvature_riccati, initialize_jacobi_at_zero,
    march_reconstruct, write_conjugates_csv, write_diagnostics_json, write_rmat_csv, AnchorPolicy, DataAccess,
    I0Estimator, ReconstructionResult, ThirdDerivativeStencil,
};
use crate::metric::{normal_coordinate_metric, write_focal_csv, write_metric_csv, NormalCoordinateMetric, SurfacePatch};

pub use config::{ExperimentConfig, ToleranceProfile, Tolerances};
pub use report::{run_report, write_summary_csv, ComparisonReport, ReportRow, RowStatus};

/// File names inside an experiment directory.
pub mod files {
    pub const CONFIG: &str = "config.ini";
    pub const GRID: &str = "grid.csv";
    pub const TRUTH_DIR: &str = "truth";
    /// Curvature along the geodesic from the forward model.
    pub const TRUTH: &str = "truth/curvature.csv";
    pub const RMAT: &str = "rmat.csv";
    pub const RMAT_I0: &str = "rmat_i0.csv";
    pub const DIAGONAL: &str = "diagonal_estimate.csv";
    pub const CONJUGATES: &str = "conjugates.csv";
    pub const DIAGNOSTICS: &str = "diagnostics.json";
    pub const CHECKS: &str = "checks.json";
    pub const METRIC: &str = "metric.csv";
    pub const FOCAL: &str = "focal.csv";
    pub const REPORT: &str = "report.csv";
    pub const CURVATURE_TABLE: &str = "curvature_errors.csv";
    pub const CONJUGATE_TABLE: &str = "conjugate_table.csv";
    pub const METRIC_TABLE: &str = "metric_errors.csv";
    pub const SUMMARY: &str = "summary.txt";
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| DixError::Io(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| DixError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn read_grid(out: &Path) -> Result<SphereDataGrid<f64>> {
    read_grid_csv(open(&out.join(files::GRID))?)
}

pub(crate) fn read_curve(path: &Path) -> Result<CurvatureCurve<f64>> {
    read_curve_csv(open(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSummary {
    pub r_count: usize,
    pub t_count: usize,
    pub invalid_cells: usize,
    pub warnings: Vec<String>,
}

/// The truth curve extends this far past `ε` so the report can locate
/// conjugate pairs just outside `I0`.
pub const TRUTH_MARGIN: f64 = 0.25;

/// Integrates the geodesic, synthesizes the data grid and writes `grid.csv`
/// plus the sealed truth curve.
pub fn run_forward(cfg: &ExperimentConfig, out: &Path) -> Result<ForwardSummary> {
    cfg.validate()?;
    let chart = cfg.chart()?;
    let x0 = DVector::from_column_slice(&cfg.x0);
    let v0 = normalize(chart.as_ref(), &x0, &DVector::from_column_slice(&cfg.v0));
    let frame = integrate_geodesic(
        chart.as_ref(),
        &x0,
        &v0,
        (-cfg.horizon, cfg.epsilon + TRUTH_MARGIN),
        cfg.step,
        &GeodesicOptions::default(),
    )?;
    let data = synthesize_sphere_data(chart.as_ref(), &frame, cfg.epsilon, cfg.horizon, cfg.step)?;
    fs::create_dir_all(out.join(files::TRUTH_DIR))?;
    fs::write(out.join(files::CONFIG), cfg.to_text())?;
    write_grid_csv(&data.grid, create(&out.join(files::GRID))?)?;
    write_curve_csv(&data.curve, create(&out.join(files::TRUTH))?)?;
    Ok(ForwardSummary {
        r_count: data.grid.r_count(),
        t_count: data.grid.t_count(),
        invalid_cells: data.grid.cells.iter().filter(|c| c.is_none()).count(),
        warnings: data.warnings,
    })
}

/// Gauge and block-halving sensitivity of the march.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfChecks {
    pub seed: u64,
    /// Sup-norm change of `rmat_rec` under a random right factor on `Z(0, ·)`.
    pub gauge_change: f64,
    pub base_steps: usize,
    pub halved_steps: usize,
    /// Sup-norm change of `rmat_rec` with half the block size.
    pub halving_change: f64,
}

#[derive(Debug, Clone)]
pub struct InvertSummary {
    pub result: ReconstructionResult<f64>,
    pub checks: Option<SelfChecks>,
}

fn sup_change(a: &CurvatureCurve<f64>, b: &CurvatureCurve<f64>) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Random invertible `m × m` right factor for the gauge check.
pub fn gauge_matrix(m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    DMatrix::from_fn(m, m, |_, _| rng.gen_range(-0.5..0.5)) + DMatrix::identity(m, m)
}

/// Reconstructs from `grid.csv` and writes the result files.
pub fn run_invert(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<InvertSummary> {
    let grid = read_grid(out)?;
    if grid.dim != cfg.dim() {
        return Err(DixError::Dimension(format!("grid has dimension {}, config {}", grid.dim, cfg.dim())));
    }
    let access = DataAccess::new(&grid, cfg.strict_data);
    let estimate = match cfg.estimator {
        I0Estimator::Diagonal(stencil) => estimate_curvature_on_i0(&access, stencil)?,
        I0Estimator::Riccati => estimate_curvature_riccati(&access)?,
    };
    let diagonal = estimate_curvature_on_i0(&access, ThirdDerivativeStencil::Richardson)?;
    let init = initialize_jacobi_at_zero(&access, &estimate.curve, &AnchorPolicy::default())?;
    let mut result = march_reconstruct(&access, &estimate.curve, &init, &cfg.march)?;

    let checks = if cfg.self_checks {
        let gauge = gauge_matrix(grid.dim - 1, seed);
        let gauged = march_reconstruct(&access, &estimate.curve, &init.right_mul(&gauge), &cfg.march)?;
        let base_steps = cfg.march.initial_steps.unwrap_or_else(|| (cfg.epsilon / (4.0 * cfg.step)).round() as usize);
        let halved_steps = (base_steps / 2).max(1);
        let mut halved_opts = cfg.march.clone();
        halved_opts.initial_steps = Some(halved_steps);
        halved_opts.min_steps = halved_opts.min_steps.min(halved_steps);
        let halved = march_reconstruct(&access, &estimate.curve, &init, &halved_opts)?;
        Some(SelfChecks {
            seed,
            gauge_change: sup_change(&result.rmat_rec, &gauged.rmat_rec),
            base_steps,
            halved_steps,
            halving_change: sup_change(&result.rmat_rec, &halved.rmat_rec),
        })
    } else {
        None
    };
    result.diagnostics.warnings.splice(0..0, estimate.warnings);
    result.diagnostics.hygiene = Some(access.report());

    write_rmat_csv(&result.rmat_rec, create(&out.join(files::RMAT))?)?;
    write_rmat_csv(&result.rmat_i0, create(&out.join(files::RMAT_I0))?)?;
    write_rmat_csv(&diagonal.curve, create(&out.join(files::DIAGONAL))?)?;
    write_conjugates_csv(&result.conjugates, create(&out.join(files::CONJUGATES))?)?;
    write_diagnostics_json(&result.diagnostics, create(&out.join(files::DIAGNOSTICS))?)?;
    let checks_path = out.join(files::CHECKS);
    match &checks {
        Some(c) => serde_json::to_writer_pretty(create(&checks_path)?, c).map_err(|e| DixError::Io(e.to_string()))?,
        None if checks_path.exists() => fs::remove_file(checks_path)?,
        None => {}
    }
    Ok(InvertSummary { result, checks })
}

/// Sample times of the recovered metric: every fourth grid step from `0` to `−T`.
pub fn metric_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let stride = 4.0 * cfg.step;
    let count = (cfg.horizon / stride + 1e-9).floor() as usize;
    (0..=count).map(|k| -(k as f64) * stride).collect()
}

/// The metric in surface normal coordinates of the sphere of radius
/// `metric_radius` around `γ(−radius)`, driven by `curvature`.
pub fn metric_from_curve(
    cfg: &ExperimentConfig,
    grid: &SphereDataGrid<f64>,
    curvature: &CurvatureCurve<f64>,
) -> Result<NormalCoordinateMetric<f64>> {
    let patch = SurfacePatch::from_reconstruction(curvature, grid, -cfg.metric_radius)?;
    patch.validate(None)?;
    normal_coordinate_metric(&patch, &metric_times(cfg))
}

/// Assembles the metric from `grid.csv` and `rmat.csv`.
pub fn run_recover_metric(cfg: &ExperimentConfig, out: &Path) -> Result<NormalCoordinateMetric<f64>> {
    let grid = read_grid(out)?;
    let rmat = read_curve(&out.join(files::RMAT))?;
    let metric = metric_from_curve(cfg, &grid, &rmat)?;
    write_metric_csv(&metric, create(&out.join(files::METRIC))?)?;
    write_focal_csv(&metric, create(&out.join(files::FOCAL))?)?;
    Ok(metric)
}

/// All four stages for one configuration, with wall-clock times per stage.
pub fn run_case(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<ComparisonReport> {
    let mut runtime = Vec::new();
    let clock = Instant::now();
    run_forward(cfg, out)?;
    runtime.push(("forward".to_string(), clock.elapsed().as_secs_f64()));
    let clock = Instant::now();
    run_invert(cfg, out, seed)?;
    runtime.push(("invert".to_string(), clock.elapsed().as_secs_f64()));
    let clock = Instant::now();
    run_recover_metric(cfg, out)?;
    runtime.push(("recover-metric".to_string(), clock.elapsed().as_secs_f64()));
    let clock = Instant::now();
    let mut report = run_report(cfg, out, seed)?;
    runtime.push(("report".to_string(), clock.elapsed().as_secs_f64()));
    report.runtime = runtime;
    Ok(report)
}

/// Runs every catalog chart with its default configuration into
/// `out/<chart id>/` and writes `out/summary.csv`.
pub fn demo(out: &Path, profile: ToleranceProfile, strict: bool, seed: u64) -> Result<Vec<ComparisonReport>> {
    let mut reports = Vec::new();
    for id in CATALOG_IDS {
        let mut cfg = ExperimentConfig::for_chart(id)?;
        cfg.profile = profile;
        cfg.strict_data = strict;
        reports.push(run_case(&cfg, &out.join(id), seed)?);
    }
    write_summary_csv(&reports, create(&out.join("summary.csv"))?)?;
    Ok(reports)
}
