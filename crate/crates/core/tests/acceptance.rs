//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Every catalog chart runs through forward synthesis, strict inversion with
//! the gauge and halving checks, metric recovery and the comparison report;
//! the criteria are then read off the reports plus a few dedicated oracles.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use finsler_dix::catalog::{chart_by_id, CATALOG_IDS};
use finsler_dix::experiment::{files, run_case, ComparisonReport, ExperimentConfig, RowStatus};
use finsler_dix::forward::read_curve_csv;
use finsler_dix::inverse::{
    estimate_curvature_on_i0, q_function, read_conjugates_csv, DataAccess, ThirdDerivativeStencil,
};
use finsler_dix::metric::{assemble_metric, focal_times, SurfacePatch};
use finsler_dix::forward::read_grid_csv;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const SEED: u64 = 20;

struct Case {
    id: &'static str,
    report: ComparisonReport,
    /// Forward synthesis plus inversion, seconds.
    seconds: f64,
    rmat: Vec<(f64, DMatrix<f64>)>,
    conjugates: Vec<(f64, f64)>,
    diagonal_plain: f64,
}

fn run(id: &'static str, root: &Path) -> Case {
    let out = root.join(id);
    let mut cfg = ExperimentConfig::for_chart(id).unwrap();
    cfg.strict_data = true;
    let report = run_case(&cfg, &out, SEED).unwrap_or_else(|e| panic!("{id}: {e}"));
    let seconds = report.runtime.iter().filter(|(k, _)| k == "forward" || k == "invert").map(|(_, v)| v).sum();
    let open = |name: &str| BufReader::new(File::open(out.join(name)).unwrap());
    let curve = read_curve_csv::<f64, _>(open(files::RMAT)).unwrap();
    let rmat = (0..curve.len()).map(|i| (curve.node(i), curve.values[i].clone())).collect();
    let conjugates = read_conjugates_csv(open(files::CONJUGATES)).unwrap();
    // the plain five-point diagonal estimate, without Richardson extrapolation
    let grid = read_grid_csv::<f64, _>(open(files::GRID)).unwrap();
    let truth = read_curve_csv::<f64, _>(open(files::TRUTH)).unwrap();
    let est = estimate_curvature_on_i0(&DataAccess::new(&grid, true), ThirdDerivativeStencil::OneSided5).unwrap();
    let diagonal_plain = (0..est.curve.len())
        .map(|i| (&est.curve.values[i] - truth.at(est.curve.node(i))).norm())
        .fold(0.0, f64::max);
    Case { id, report, seconds, rmat, conjugates, diagonal_plain }
}

fn row<'a>(case: &'a Case, name: &str) -> &'a finsler_dix::experiment::ReportRow {
    case.report.rows.iter().find(|r| r.name == name).unwrap()
}

fn sup_dev(case: &Case, target: f64) -> f64 {
    case.rmat
        .iter()
        .map(|(_, r)| (r - DMatrix::identity(r.nrows(), r.ncols()) * target).norm())
        .fold(0.0, f64::max)
}

struct Tally {
    failed: Vec<usize>,
}

impl Tally {
    fn line(&mut self, n: usize, pass: bool, text: String) {
        println!("criterion {n:>2}: {} {text}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(n);
        }
    }
}

fn patch(id: &str, center: &[f64], axis: &[f64], radius: f64, z: &[f64], horizon: f64) -> SurfacePatch<f64> {
    let chart = chart_by_id::<f64>(id).unwrap();
    let z: Vec<Vec<f64>> = z.iter().map(|&a| vec![a]).collect();
    let p = SurfacePatch::geodesic_sphere(
        chart.as_ref(),
        &DVector::from_row_slice(center),
        &DVector::from_row_slice(axis),
        radius,
        &z,
        horizon,
        0.5 / 64.0,
    )
    .unwrap();
    p.validate(Some(chart.as_ref())).unwrap();
    p
}

fn metric_criterion() -> (f64, f64, f64, f64) {
    let rho = 1.0;
    let circle = patch("euclidean-2", &[0.0, 0.0], &[1.0, 0.0], rho, &[-0.5, 0.0, 0.5], 2.0);
    let (mut polar, mut focal, mut block) = (0.0f64, 0.0f64, 0.0f64);
    let mut check_block = |g: &DMatrix<f64>| {
        let n = g.nrows() - 1;
        block = block.max((g[(n, n)] - 1.0).abs());
        for k in 0..n {
            block = block.max(g[(k, n)].abs()).max(g[(n, k)].abs());
        }
    };
    for iz in 0..circle.samples.len() {
        let g0 = assemble_metric(&circle, iz, 0.0).unwrap();
        check_block(&g0);
        for k in 1..40 {
            let t = -0.02 * k as f64;
            let g = assemble_metric(&circle, iz, t).unwrap();
            check_block(&g);
            polar = polar.max((g[(0, 0)] - (rho + t).powi(2) * g0[(0, 0)] / (rho * rho)).abs());
        }
        let f = focal_times(&circle, iz).unwrap();
        focal = focal.max(if f.len() == 1 { (f[0] + rho).abs() } else { f64::INFINITY });
    }
    let r0 = 0.75;
    let sphere = patch("sphere-2", &[0.6, 0.0], &[0.0, 1.0], r0, &[-0.3, 0.0, 0.3], 4.5);
    let mut sine = 0.0f64;
    for iz in 0..sphere.samples.len() {
        let g0 = assemble_metric(&sphere, iz, 0.0).unwrap();
        check_block(&g0);
        for k in 1..200 {
            let t = -0.02 * k as f64;
            match assemble_metric(&sphere, iz, t) {
                Ok(g) => {
                    check_block(&g);
                    let law = (r0 + t).sin().powi(2) / r0.sin().powi(2) * g0[(0, 0)];
                    sine = sine.max((g[(0, 0)] - law).abs());
                }
                Err(_) => assert!((t + r0).abs() < 1e-3 || (t + r0 + PI).abs() < 1e-3),
            }
        }
    }
    (polar, focal, sine, block)
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let clock = Instant::now();
    let cases: Vec<Case> = CATALOG_IDS.iter().map(|id| run(id, root.path())).collect();
    let case = |id: &str| cases.iter().find(|c| c.id == id).unwrap();
    let mut tally = Tally { failed: Vec::new() };

    // 1. flat reconstruction
    let flat: Vec<(&str, f64, f64)> =
        ["euclidean-2", "euclidean-3"].iter().map(|id| (*id, sup_dev(case(id), 0.0), case(id).seconds)).collect();
    tally.line(
        1,
        flat.iter().all(|(_, e, s)| *e <= 1e-6 && *s <= 30.0),
        format!(
            "flat reconstruction: {}",
            flat.iter().map(|(id, e, s)| format!("{id} max|rmat| = {e:.2e} in {s:.1}s")).collect::<Vec<_>>().join(", ")
        ),
    );

    // 2. unit sphere through conjugate points
    let s2 = case("sphere-2");
    let dev = sup_dev(s2, 1.0);
    let pi_err = s2.conjugates.iter().map(|(r, t)| ((r - t).abs() - PI).abs()).fold(0.0, f64::max);
    let near_pi = s2.rmat.iter().filter(|(t, _)| (t + PI).abs() < 0.25).count();
    tally.line(
        2,
        dev <= 1e-3 && !s2.conjugates.is_empty() && pi_err <= 1e-3 && near_pi > 0,
        format!(
            "sphere-2: max|rmat - I| = {dev:.2e}, {} conjugate pairs with max ||r-t| - pi| = {pi_err:.2e}",
            s2.conjugates.len()
        ),
    );

    // 3. constant negative curvature
    let h2 = case("hyperbolic-2");
    let dev = sup_dev(h2, -1.0);
    tally.line(
        3,
        dev <= 1e-3 && h2.conjugates.is_empty(),
        format!("hyperbolic-2: max|rmat + I| = {dev:.2e}, {} conjugate pairs", h2.conjugates.len()),
    );

    // 4. non-Riemannian oracle equivalence
    let rp = row(case("randers-perturbed-2"), "curvature");
    tally.line(4, rp.value <= 1e-3, format!("randers-perturbed-2: relative sup error {:.2e}", rp.value));

    // 5. diagonal curvature extraction on I0
    let worst = cases.iter().map(|c| c.diagonal_plain).fold(0.0, f64::max);
    let worst_rich = cases.iter().map(|c| row(c, "diagonal_estimate").value).fold(0.0, f64::max);
    tally.line(
        5,
        worst <= 5e-3,
        format!("diagonal estimate on I0, all charts: max error {worst:.2e} (Richardson {worst_rich:.2e})"),
    );

    // 6. k asymptotics
    let slopes: Vec<String> = cases
        .iter()
        .map(|c| {
            let r = row(c, "k_asymptotics");
            if r.value.is_nan() { format!("{} floor", c.id) } else { format!("{} {:.2}", c.id, r.value) }
        })
        .collect();
    tally.line(
        6,
        cases.iter().all(|c| row(c, "k_asymptotics").status == RowStatus::Pass),
        format!("k remainder slope >= 3.9: {}", slopes.join(", ")),
    );

    // 7. Riccati residual of the forward data
    let worst = cases.iter().map(|c| row(c, "riccati_residual").value).fold(0.0, f64::max);
    tally.line(7, worst <= 1e-4, format!("Riccati residual away from conjugate pairs, all charts: max {worst:.2e}"));

    // 8. Q function
    let i = DMatrix::<f64>::identity(2, 2);
    let z = DMatrix::<f64>::zeros(2, 2);
    let exact = q_function(&i, &z, &z, &i, &z, &z).unwrap() == z;
    let reference = [-1.0, 0.5, 1.0]
        .iter()
        .map(|&c| (q_function(&(-&i), &z, &(&i * c), &i, &z, &(&i * -c)).unwrap() + &i * (2.0 * c)).amax())
        .fold(0.0, f64::max);
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut invariance = 0.0f64;
    for _ in 0..100 {
        let mut mat = || DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let (a1, a2, a3, b1, b2) = (mat(), mat(), mat(), mat(), mat());
        let b0 = mat() + &i * 2.5;
        let m = mat() + &i * 2.5;
        let q = q_function(&a1, &a2, &a3, &b0, &b1, &b2).unwrap();
        let qm = q_function(&(&a1 * &m), &(&a2 * &m), &(&a3 * &m), &(&b0 * &m), &(&b1 * &m), &(&b2 * &m)).unwrap();
        invariance = invariance.max((q - qm).amax());
    }
    tally.line(
        8,
        exact && reference <= 1e-12 && invariance <= 1e-10,
        format!("Q(I,0,0,I,0,0) = 0 exactly: {exact}, reference error {reference:.1e}, invariance {invariance:.1e}"),
    );

    // 9. metric recovery
    let (polar, focal, sine, block) = metric_criterion();
    let forward_inverse = cases.iter().map(|c| row(c, "metric").value).fold(0.0, f64::max);
    tally.line(
        9,
        polar <= 1e-6 && focal <= 1e-4 && sine <= 1e-5 && block <= 1e-10 && forward_inverse <= 1e-3,
        format!(
            "circle g error {polar:.1e}, focal error {focal:.1e}, sine law {sine:.1e}, block {block:.1e}, reconstructed vs forward {forward_inverse:.1e}"
        ),
    );

    // 10. gauge invariance
    let worst = cases.iter().map(|c| row(c, "gauge").value).fold(0.0, f64::max);
    tally.line(10, worst <= 1e-8, format!("random right factor, all charts: max change {worst:.2e}"));

    // 11. stability under halving the marching step
    let worst = cases.iter().map(|c| row(c, "stability").value).fold(0.0, f64::max);
    tally.line(11, worst <= 1e-4, format!("halved block size, all charts: max change {worst:.2e}"));

    // 12. hygiene audit
    let violations: f64 = cases.iter().map(|c| row(c, "hygiene").value).sum();
    tally.line(12, violations == 0.0, format!("strict data access, all charts: {violations} reads outside I0"));

    println!("acceptance suite finished in {:.1}s", clock.elapsed().as_secs_f64());
    if !tally.failed.is_empty() {
        for c in &cases {
            if !c.report.passed() {
                print!("{}", c.report.summary());
            }
        }
        eprintln!("failed criteria: {:?}", tally.failed);
        std::process::exit(1);
    }
}
