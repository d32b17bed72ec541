use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::{create, files, metric_from_curve, open, read_curve, read_grid, ExperimentConfig, SelfChecks};
use crate::error::{DixError, Result};
use crate::forward::{jacobi_matrix, k_taylor_fit, riccati_residual, CurvatureCurve, SphereDataGrid};
use crate::geodesic::uniform_grid;
use crate::inverse::{conjugates_on_lattice, q_function, read_conjugates_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Pass,
    Fail,
    /// The input for the row was not produced (e.g. self checks disabled).
    Skipped,
}

impl RowStatus {
    fn label(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Skipped => "skipped",
        }
    }
}

/// One acceptance check; `criterion` numbers follow the acceptance list.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub criterion: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub status: RowStatus,
    pub detail: String,
}

impl ReportRow {
    fn below(criterion: &'static str, name: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        let status = if value <= tolerance { RowStatus::Pass } else { RowStatus::Fail };
        Self { criterion, name, value, tolerance, status, detail }
    }

    fn skipped(criterion: &'static str, name: &'static str, detail: &str) -> Self {
        Self { criterion, name, value: f64::NAN, tolerance: f64::NAN, status: RowStatus::Skipped, detail: detail.into() }
    }
}

/// Truth against reconstruction for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub case: String,
    pub profile: &'static str,
    pub rows: Vec<ReportRow>,
    /// `t, ‖rmat_rec − rmat‖, relative error`.
    pub curvature_table: Vec<[f64; 3]>,
    /// `t, true r, detected r` (`nan` when unmatched).
    pub conjugate_table: Vec<[f64; 3]>,
    /// `t, ‖g_rec − g‖, relative error`.
    pub metric_table: Vec<[f64; 3]>,
    /// Seconds per stage; never written to the output files.
    pub runtime: Vec<(String, f64)>,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status != RowStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.status == RowStatus::Fail).collect()
    }

    /// Human-readable summary, one line per row.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{}: {verdict} (profile {})", self.case, self.profile);
        for row in &self.rows {
            let _ = writeln!(
                s,
                "  [{:<7}] {:<4} {:<18} value {:<12.4e} tolerance {:<10.3e} {}",
                row.status.label(),
                row.criterion,
                row.name,
                row.value,
                row.tolerance,
                row.detail
            );
        }
        if !self.runtime.is_empty() {
            let stages: Vec<String> = self.runtime.iter().map(|(k, v)| format!("{k} {v:.2}s")).collect();
            let _ = writeln!(s, "  runtime: {}", stages.join(", "));
        }
        s
    }

    fn write_rows<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "case,criterion,name,value,tolerance,status,detail")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{},\"{}\"",
                self.case,
                row.criterion,
                row.name,
                row.value,
                row.tolerance,
                row.status.label(),
                row.detail.replace('"', "'")
            )?;
        }
        Ok(())
    }

    /// Writes the report files into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        self.write_rows(create(&out.join(files::REPORT))?)?;
        let tables = [
            (files::CURVATURE_TABLE, "t,abs_error,rel_error", &self.curvature_table),
            (files::CONJUGATE_TABLE, "t,r_true,r_detected", &self.conjugate_table),
            (files::METRIC_TABLE, "t,abs_error,rel_error", &self.metric_table),
        ];
        for (name, header, rows) in tables {
            let mut w = create(&out.join(name))?;
            writeln!(w, "{header}")?;
            for r in rows {
                writeln!(w, "{:.17e},{:.17e},{:.17e}", r[0], r[1], r[2])?;
            }
        }
        let mut text = self.clone();
        text.runtime.clear();
        std::fs::write(out.join(files::SUMMARY), text.summary())?;
        Ok(())
    }
}

/// Concatenated rows of several reports.
pub fn write_summary_csv<W: Write>(reports: &[ComparisonReport], mut w: W) -> Result<()> {
    writeln!(w, "case,criterion,name,value,tolerance,status,detail")?;
    for r in reports {
        let mut buf = Vec::new();
        r.write_rows(&mut buf)?;
        let text = String::from_utf8_lossy(&buf);
        for line in text.lines().skip(1) {
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

fn check_curve(name: &str, curve: &CurvatureCurve<f64>, m: usize, lo: f64, hi: f64) -> Result<()> {
    let slack = 1e-9 * curve.step.max(1.0);
    if curve.values.first().is_some_and(|v| v.nrows() != m) {
        return Err(DixError::Dimension(format!("{name} has {0}×{0} entries, the grid needs {m}×{m}", curve.values[0].nrows())));
    }
    if curve.is_empty() || curve.start > lo + slack || curve.end() < hi - slack {
        return Err(DixError::Dimension(format!("{name} does not cover [{lo}, {hi}]")));
    }
    Ok(())
}

/// Jacobi slices of the truth on an `r` lattice, for every `t` of the grid.
fn truth_conjugates(truth: &CurvatureCurve<f64>, r_nodes: &[f64], t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let slices = t_grid.par_iter().map(|&t| jacobi_matrix(truth, t, r_nodes)).collect::<Result<Vec<_>>>()?;
    Ok(conjugates_on_lattice(r_nodes, t_grid, |ir, it| (slices[it][ir].j.clone(), slices[it][ir].y.clone())))
}

fn curvature_row(
    cfg: &ExperimentConfig,
    truth: &CurvatureCurve<f64>,
    rmat: &CurvatureCurve<f64>,
    table: &mut Vec<[f64; 3]>,
) -> ReportRow {
    let tol = cfg.tolerances();
    let scale = (0..rmat.len()).map(|i| truth.at(rmat.node(i)).norm()).fold(0.0, f64::max);
    let flat = scale < 1e-8;
    let mut sup = 0.0f64;
    for (i, v) in rmat.values.iter().enumerate() {
        let t = rmat.node(i);
        let err = (v - truth.at(t)).norm();
        sup = sup.max(err);
        table.push([t, err, if flat { f64::NAN } else { err / scale }]);
    }
    if flat {
        ReportRow::below("1-4", "curvature", sup, tol.flat, "absolute sup-norm error, flat truth".into())
    } else {
        ReportRow::below("1-4", "curvature", sup / scale, tol.relative, format!("relative sup-norm error, |truth| ≤ {scale:.3e}"))
    }
}

fn conjugate_row(
    cfg: &ExperimentConfig,
    truth_pairs: &[(f64, f64)],
    detected: &[(f64, f64)],
    table: &mut Vec<[f64; 3]>,
) -> ReportRow {
    let same_t = |a: f64, b: f64| (a - b).abs() <= 1e-9 * cfg.step;
    let mut worst = 0.0f64;
    let mut unmatched = 0;
    let mut used = vec![false; detected.len()];
    for &(r, t) in truth_pairs {
        let best = detected
            .iter()
            .enumerate()
            .filter(|(k, d)| !used[*k] && same_t(d.1, t))
            .min_by(|a, b| (a.1 .0 - r).abs().total_cmp(&(b.1 .0 - r).abs()));
        match best {
            Some((k, d)) if (d.0 - r).abs() < 10.0 * cfg.step => {
                used[k] = true;
                worst = worst.max((d.0 - r).abs());
                table.push([t, r, d.0]);
            }
            _ => {
                unmatched += 1;
                table.push([t, r, f64::NAN]);
            }
        }
    }
    let spurious = used.iter().filter(|u| !**u).count();
    for (k, d) in detected.iter().enumerate() {
        if !used[k] {
            table.push([d.1, f64::NAN, d.0]);
        }
    }
    let detail = format!(
        "{} true pairs, {} detected, {unmatched} missed, {spurious} spurious",
        truth_pairs.len(),
        detected.len()
    );
    let mut row = ReportRow::below("2-3", "conjugates", worst, cfg.tolerances().conjugate, detail);
    if unmatched + spurious > 0 {
        row.status = RowStatus::Fail;
    }
    row
}

fn riccati_row(cfg: &ExperimentConfig, grid: &SphereDataGrid<f64>, truth: &CurvatureCurve<f64>) -> Result<ReportRow> {
    const EXCLUSION: f64 = 0.2;
    // conjugate pairs up to EXCLUSION beyond I0 matter too, as far as the truth reaches
    let lo = (-grid.epsilon - EXCLUSION).max(truth.start);
    let hi = (grid.epsilon + EXCLUSION).min(truth.end());
    let pairs = truth_conjugates(truth, &uniform_grid(lo, hi, grid.step), &grid.t_grid)?;
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for (it, &t) in grid.t_grid.iter().enumerate() {
        let near: Vec<f64> = pairs.iter().filter(|p| (p.1 - t).abs() <= 1e-9).map(|p| p.0).collect();
        for (ir, &r) in grid.r_grid.iter().enumerate() {
            if (r - t).abs() < EXCLUSION || near.iter().any(|rc| (r - rc).abs() < EXCLUSION) {
                continue;
            }
            if let Some(res) = riccati_residual(grid, truth, ir, it) {
                worst = worst.max(res);
                count += 1;
            }
        }
    }
    Ok(ReportRow::below(
        "7",
        "riccati_residual",
        worst,
        cfg.tolerances().riccati,
        format!("{count} cells at distance ≥ {EXCLUSION} from conjugate pairs"),
    ))
}

fn k_row(cfg: &ExperimentConfig, truth: &CurvatureCurve<f64>) -> Result<ReportRow> {
    let tol = cfg.tolerances().k_slope;
    let mut slopes = Vec::new();
    let mut floor = 0;
    let mut pass = true;
    for t in [-2.0, -1.0, -0.25] {
        if !truth.contains(t) || !truth.contains(t + 0.1) {
            continue;
        }
        let fit = k_taylor_fit(truth, t, 1e-3, 1e-1, 9)?;
        pass &= fit.passes(tol);
        match fit.slope {
            Some(s) if !fit.at_rounding_floor => slopes.push(s),
            _ => floor += 1,
        }
    }
    let value = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = if slopes.is_empty() {
        "remainder at rounding level (flat)".to_string()
    } else {
        format!("minimum slope over {} times, {floor} at rounding level", slopes.len())
    };
    let status = if pass { RowStatus::Pass } else { RowStatus::Fail };
    Ok(ReportRow { criterion: "6", name: "k_asymptotics", value: if slopes.is_empty() { f64::NAN } else { value }, tolerance: tol, status, detail })
}

fn q_row(cfg: &ExperimentConfig, m: usize, seed: u64) -> Result<ReportRow> {
    let tol = cfg.tolerances();
    let i = DMatrix::<f64>::identity(m, m);
    let z = DMatrix::<f64>::zeros(m, m);
    let mut reference = q_function(&i, &z, &z, &i, &z, &z)?.amax();
    for c in [-1.0, 0.5, 1.0] {
        let q = q_function(&(-&i), &z, &(&i * c), &i, &z, &(&i * -c))?;
        reference = reference.max((q + &i * (2.0 * c)).amax());
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut invariance = 0.0f64;
    for _ in 0..100 {
        let mut mat = || DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let (a1, a2, a3) = (mat(), mat(), mat());
        let b0 = mat() + &i * 2.5;
        let (b1, b2) = (mat(), mat());
        let g = mat() + &i * 2.5;
        let q = q_function(&a1, &a2, &a3, &b0, &b1, &b2)?;
        let qg = q_function(&(&a1 * &g), &(&a2 * &g), &(&a3 * &g), &(&b0 * &g), &(&b1 * &g), &(&b2 * &g))?;
        invariance = invariance.max((q - qg).amax());
    }
    let mut row = ReportRow::below(
        "8",
        "q_function",
        invariance,
        tol.q_invariance,
        format!("right-multiplication invariance over 100 instances; reference error {reference:.1e}"),
    );
    if reference > tol.q_reference {
        row.status = RowStatus::Fail;
    }
    Ok(row)
}

fn metric_row(
    cfg: &ExperimentConfig,
    grid: &SphereDataGrid<f64>,
    truth: &CurvatureCurve<f64>,
    rmat: &CurvatureCurve<f64>,
    table: &mut Vec<[f64; 3]>,
) -> Result<ReportRow> {
    let tol = cfg.tolerances();
    let rec = metric_from_curve(cfg, grid, rmat)?;
    let exact = metric_from_curve(cfg, grid, truth)?;
    let scale = exact.g[0].iter().flatten().map(|g| g.norm()).fold(0.0, f64::max);
    let mut sup = 0.0f64;
    let mut degenerate = 0;
    for (k, (a, b)) in rec.g[0].iter().zip(&exact.g[0]).enumerate() {
        match (a, b) {
            (Some(a), Some(b)) => {
                let err = (a - b).norm();
                sup = sup.max(err);
                table.push([rec.t_grid[k], err, err / b.norm()]);
            }
            (None, None) => table.push([rec.t_grid[k], f64::NAN, f64::NAN]),
            _ => {
                // one side just crossed the focal threshold
                let t = rec.t_grid[k];
                let focal = rec.focal_sets[0].iter().chain(&exact.focal_sets[0]).any(|f| (f - t).abs() <= tol.conjugate);
                if !focal {
                    degenerate += 1;
                }
                table.push([t, f64::NAN, f64::NAN]);
            }
        }
    }
    let (fa, fb) = (&rec.focal_sets[0], &exact.focal_sets[0]);
    let focal_shift = fa.iter().zip(fb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let detail = format!(
        "relative to sup |g| = {scale:.3e}; {} focal times (true {}), max shift {focal_shift:.1e}",
        fa.len(),
        fb.len()
    );
    let mut row = ReportRow::below("9", "metric", sup / scale, tol.metric, detail);
    if degenerate > 0 || fa.len() != fb.len() || focal_shift > tol.conjugate {
        row.status = RowStatus::Fail;
    }
    Ok(row)
}

fn hygiene_row(cfg: &ExperimentConfig, out: &Path) -> Result<ReportRow> {
    let diagnostics: serde_json::Value =
        serde_json::from_reader(open(&out.join(files::DIAGNOSTICS))?).map_err(|e| DixError::Parse { line: e.line(), message: e.to_string() })?;
    let hygiene = &diagnostics["hygiene"];
    let (Some(reads), Some(violations)) = (hygiene["reads"].as_u64(), hygiene["violations"].as_u64()) else {
        return Ok(ReportRow::skipped("12", "hygiene", "no access audit in diagnostics"));
    };
    let mode = if cfg.strict_data { "strict" } else { "lenient" };
    Ok(ReportRow::below("12", "hygiene", violations as f64, 0.0, format!("{reads} audited reads ({mode})")))
}

/// Compares the result files in `out` against the sealed truth and writes
/// the report files.
pub fn run_report(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<ComparisonReport> {
    let tol = cfg.tolerances();
    let grid = read_grid(out)?;
    let m = grid.dim - 1;
    let truth = read_curve(&out.join(files::TRUTH))?;
    let rmat = read_curve(&out.join(files::RMAT))?;
    let diagonal = read_curve(&out.join(files::DIAGONAL))?;
    let detected = read_conjugates_csv::<f64, _>(open(&out.join(files::CONJUGATES))?)?;
    let last = grid.epsilon - grid.step;
    check_curve("truth curve", &truth, m, -grid.horizon, last)?;
    check_curve("rmat_rec", &rmat, m, -grid.horizon, 0.0)?;
    check_curve("diagonal estimate", &diagonal, m, -last, last)?;

    let mut report = ComparisonReport {
        case: cfg.name.clone(),
        profile: cfg.profile.name(),
        rows: Vec::new(),
        curvature_table: Vec::new(),
        conjugate_table: Vec::new(),
        metric_table: Vec::new(),
        runtime: Vec::new(),
    };
    report.rows.push(curvature_row(cfg, &truth, &rmat, &mut report.curvature_table));

    let r_nodes = uniform_grid(-grid.horizon, last, grid.step);
    let truth_pairs = truth_conjugates(&truth, &r_nodes, &grid.t_grid)?;
    report.rows.push(conjugate_row(cfg, &truth_pairs, &detected, &mut report.conjugate_table));

    let diag_err = (0..diagonal.len()).map(|i| (&diagonal.values[i] - truth.at(diagonal.node(i))).norm()).fold(0.0, f64::max);
    report.rows.push(ReportRow::below("5", "diagonal_estimate", diag_err, tol.diagonal, "sup-norm error on I0".into()));
    report.rows.push(k_row(cfg, &truth)?);
    report.rows.push(riccati_row(cfg, &grid, &truth)?);
    report.rows.push(q_row(cfg, m, seed)?);
    report.rows.push(metric_row(cfg, &grid, &truth, &rmat, &mut report.metric_table)?);

    let checks_path = out.join(files::CHECKS);
    if checks_path.exists() {
        let checks: SelfChecks = serde_json::from_reader(open(&checks_path)?)
            .map_err(|e| DixError::Parse { line: e.line(), message: e.to_string() })?;
        report.rows.push(ReportRow::below("10", "gauge", checks.gauge_change, tol.gauge, format!("random right factor, seed {}", checks.seed)));
        report.rows.push(ReportRow::below(
            "11",
            "stability",
            checks.halving_change,
            tol.stability,
            format!("block size {} vs {} grid steps", checks.base_steps, checks.halved_steps),
        ));
    } else {
        report.rows.push(ReportRow::skipped("10", "gauge", "self checks not run"));
        report.rows.push(ReportRow::skipped("11", "stability", "self checks not run"));
    }
    report.rows.push(hygiene_row(cfg, out)?);
    report.write(out)?;
    Ok(report)
}
