use std::f64::consts::PI;

use finsler_dix::forward::{synthesize_from_curve, CurvatureCurve, ForwardData};
use finsler_dix::inverse::{
    estimate_curvature_on_i0, estimate_curvature_riccati, initialize_jacobi_at_zero, march_reconstruct, q_function,
    read_result_curve, reconstruct, recover_shape_and_k, write_conjugates_csv, write_diagnostics_json,
    write_rmat_csv, AnchorPolicy, DataAccess, I0Estimator, MarchOptions, ReconstructOptions,
    ThirdDerivativeStencil,
};
use finsler_dix::numerics::UniformSeries;
use finsler_dix::DixError;
use nalgebra::DMatrix;
use proptest::prelude::*;

const EPS: f64 = 0.5;
const STEP: f64 = EPS / 64.0;

fn curve_from(lo: f64, hi: f64, f: impl Fn(f64) -> DMatrix<f64>) -> CurvatureCurve<f64> {
    let n = ((hi - lo) / STEP).round() as usize + 1;
    UniformSeries::new(lo, STEP, (0..n).map(|i| f(lo + i as f64 * STEP)).collect())
}

fn constant(k: f64, m: usize, horizon: f64) -> ForwardData<f64> {
    let curve = curve_from(-horizon - 0.25, EPS + 0.25, |_| DMatrix::identity(m, m) * k);
    synthesize_from_curve(curve, m + 1, EPS, horizon, STEP).unwrap()
}

fn varying(horizon: f64) -> ForwardData<f64> {
    let curve = curve_from(-horizon - 0.25, EPS + 0.25, |t| {
        let b = 0.2 * (1.3 * t).cos();
        DMatrix::from_row_slice(2, 2, &[0.5 + 0.3 * t.sin(), b, b, -0.2 + 0.02 * t])
    });
    synthesize_from_curve(curve, 3, EPS, horizon, STEP).unwrap()
}

fn sup_error(rec: &CurvatureCurve<f64>, truth: &CurvatureCurve<f64>) -> f64 {
    (0..rec.len()).map(|i| (&rec.values[i] - truth.at(rec.node(i))).amax()).fold(0.0, f64::max)
}

#[test]
fn q_function_reference_values() {
    let i = DMatrix::<f64>::identity(2, 2);
    let z = DMatrix::<f64>::zeros(2, 2);
    assert_eq!(q_function(&i, &z, &z, &i, &z, &z).unwrap(), z);
    for c in [-1.0, 0.5, 1.0] {
        let q = q_function(&(-&i), &z, &(&i * c), &i, &z, &(&i * -c)).unwrap();
        assert!((q + &i * (2.0 * c)).amax() < 1e-12);
    }
    assert!(matches!(q_function(&i, &z, &z, &z, &z, &z), Err(DixError::Domain(_))));
}

/// Independent oracle: `∂_t³ k` at the diagonal by finite differences of
/// `k = j y⁻¹` along an explicit family `j(r, t) = (r − t) A + (r − t)² B(t)`.
#[test]
fn q_function_matches_third_derivative_of_k() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.8]);
    let b = |t: f64| DMatrix::from_row_slice(2, 2, &[0.4 * t, 0.1, t * t, -0.3]);
    let db = |t: f64| DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 2.0 * t, 0.0]);
    let r = 0.3;
    // j = u A + u² B(t), u = r − t; derivatives by hand
    let j = |t: f64| (r - t) * &a + (r - t) * (r - t) * b(t);
    let y = |t: f64| &a + 2.0 * (r - t) * b(t);
    let k = |t: f64| j(t) * y(t).try_inverse().unwrap();
    let j1 = -&a; // at t = r
    let j2 = 2.0 * b(r);
    let j3 = 6.0 * db(r);
    let y0 = a.clone();
    let y1 = -2.0 * b(r);
    let y2 = -4.0 * db(r);
    let q = q_function(&j1, &j2, &j3, &y0, &y1, &y2).unwrap();
    let h = 1e-2;
    let fd = (k(r + 2.0 * h) - k(r + h) * 2.0 + k(r - h) * 2.0 - k(r - 2.0 * h)) / (2.0 * h * h * h);
    assert!((q - fd).amax() < 1e-3, "Q disagrees with the difference quotient of k");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn q_function_is_invariant_under_right_multiplication(
        entries in prop::collection::vec(-1.0f64..1.0, 6 * 4),
        m in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let mat = |k: usize| DMatrix::from_column_slice(2, 2, &entries[4 * k..4 * k + 4]);
        let b0 = mat(3) + DMatrix::identity(2, 2) * 2.5;
        let mm = DMatrix::from_column_slice(2, 2, &m) + DMatrix::identity(2, 2) * 2.5;
        let q = q_function(&mat(0), &mat(1), &mat(2), &b0, &mat(4), &mat(5)).unwrap();
        let qm = q_function(&(mat(0) * &mm), &(mat(1) * &mm), &(mat(2) * &mm), &(&b0 * &mm), &(mat(4) * &mm), &(mat(5) * &mm)).unwrap();
        prop_assert!((q - qm).amax() < 1e-10);
    }
}

#[test]
fn diagonal_estimate_reproduces_curvature_on_i0() {
    for data in [constant(0.0, 1, 3.0), constant(1.0, 1, 3.0), constant(-1.0, 2, 3.0), varying(3.0)] {
        let access = DataAccess::new(&data.grid, true);
        for stencil in [ThirdDerivativeStencil::OneSided5, ThirdDerivativeStencil::Richardson] {
            let est = estimate_curvature_on_i0(&access, stencil).unwrap();
            assert_eq!(est.curve.len(), data.grid.r_count());
            let err = sup_error(&est.curve, &data.curve);
            assert!(err < 5e-3, "{stencil:?}: {err:e}");
        }
        let rich = estimate_curvature_on_i0(&access, ThirdDerivativeStencil::Richardson).unwrap();
        assert!(sup_error(&rich.curve, &data.curve) < 1e-4);
        assert_eq!(access.report().violations, 0);
    }
}

#[test]
fn riccati_estimate_is_accurate_on_i0() {
    for data in [constant(1.0, 1, 3.0), constant(-1.0, 1, 3.0), varying(3.0)] {
        let access = DataAccess::new(&data.grid, true);
        let est = estimate_curvature_riccati(&access).unwrap();
        assert!(sup_error(&est.curve, &data.curve) < 1e-8);
    }
}

#[test]
fn strict_access_rejects_reads_outside_i0() {
    let data = constant(0.0, 1, 2.0);
    let strict = DataAccess::new(&data.grid, true);
    assert!(matches!(strict.s(EPS, -1.0), Err(DixError::Hygiene(_))));
    assert!(strict.s(0.0, -1.0).unwrap().is_some());
    let report = strict.report();
    assert_eq!((report.reads, report.violations), (2, 1));
    let lenient = DataAccess::new(&data.grid, false);
    assert!(lenient.s(-1.0, -1.0).unwrap().is_none());
    assert_eq!(lenient.report().violations, 1);
}

#[test]
fn anchors_switch_around_conjugate_points_and_initial_state_is_consistent() {
    let data = constant(1.0, 1, 5.0);
    let access = DataAccess::new(&data.grid, true);
    let rmat = estimate_curvature_riccati(&access).unwrap().curve;
    let init = initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::default()).unwrap();
    assert!(init.anchors.len() > 1, "no anchor switch on the sphere");
    // s(0, t) = y0 j0⁻¹ must agree with cot(−t) where j0 is invertible
    for (it, &t) in init.t_grid.iter().enumerate() {
        if t.abs() < 0.05 || (t + PI).abs() < 0.05 {
            continue;
        }
        let z = &init.z[it];
        let s = &z.y[0] * z.j[0].clone().try_inverse().unwrap();
        assert!((s[(0, 0)] - 1.0 / (-t).tan()).abs() < 1e-6 * (1.0 + s[(0, 0)].abs()), "t = {t}");
    }
}

#[test]
fn different_anchor_choices_give_the_same_shape_operator() {
    let data = varying(3.0);
    let access = DataAccess::new(&data.grid, true);
    let rmat = estimate_curvature_riccati(&access).unwrap().curve;
    let best = initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::default()).unwrap();
    let first =
        initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::Schedule(vec![(EPS, -0.375), (-0.3, 0.375)])).unwrap();
    let second =
        initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::Schedule(vec![(EPS, -0.25), (-0.1, 0.3125), (-2.0, 0.125)]))
            .unwrap();
    assert_eq!((first.anchors.len(), second.anchors.len()), (2, 3));
    for it in 0..best.t_grid.len() {
        if best.t_grid[it].abs() < 0.05 {
            continue;
        }
        let s = |z: &finsler_dix::inverse::StateZ<f64>| &z.y[0] * z.j[0].clone().try_inverse().unwrap();
        let reference = s(&best.z[it]);
        for other in [&first, &second] {
            assert!((s(&other.z[it]) - &reference).amax() < 1e-6 * (1.0 + reference.amax()));
        }
    }
}

#[test]
fn anchor_schedule_crossing_the_diagonal_names_the_gap() {
    let data = constant(1.0, 1, 3.0);
    let access = DataAccess::new(&data.grid, true);
    let rmat = estimate_curvature_riccati(&access).unwrap().curve;
    // s(0, t) is singular at t = 0, so a single anchor at r = 0 cannot work
    match initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::Schedule(vec![(EPS, 0.0)])) {
        Err(DixError::Initialization { t_lo, t_hi }) => assert!(t_lo <= 0.0 && t_hi >= 0.0 && t_hi - t_lo < 0.2),
        other => panic!("expected an initialization error, got {other:?}"),
    }
    let off_grid = initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::Schedule(vec![(EPS, 0.123)]));
    assert!(matches!(off_grid, Err(DixError::Config(_))));
}

#[test]
fn conjugate_pair_inside_the_measurement_square_is_rejected() {
    let mut data = constant(1.0, 1, 3.0);
    let grid = &mut data.grid;
    let (ir, it) = (grid.r_index(0.25).unwrap(), grid.t_index(-0.25).unwrap());
    let nr = grid.r_count();
    grid.cells[it * nr + ir] = None;
    let access = DataAccess::new(&data.grid, true);
    let rmat = estimate_curvature_riccati(&access).unwrap().curve;
    let err = initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::default()).unwrap_err();
    assert!(matches!(err, DixError::Domain(_)), "{err:?}");
}

#[test]
fn flat_and_constant_curvature_reconstructions() {
    for (k, m, tol) in [(0.0, 1, 1e-6), (0.0, 2, 1e-6), (1.0, 1, 1e-5), (-1.0, 1, 1e-3)] {
        let data = constant(k, m, 5.0);
        let res = reconstruct(&data.grid, &ReconstructOptions { strict: true, ..Default::default() }).unwrap();
        assert_eq!(res.rmat_rec.len(), 641);
        assert!((res.rmat_rec.start + 5.0).abs() < 1e-12 && res.rmat_rec.end().abs() < 1e-12);
        let err = sup_error(&res.rmat_rec, &data.curve);
        assert!(err < tol, "K = {k}, m = {m}: {err:e}");
        assert_eq!(res.diagnostics.hygiene.unwrap().violations, 0);
        assert!(res.diagnostics.max_contraction < 1.0);
        if k <= 0.0 {
            assert!(res.conjugates.is_empty());
        }
    }
}

#[test]
fn varying_curvature_is_recovered() {
    let data = varying(3.0);
    let res = reconstruct(&data.grid, &ReconstructOptions::default()).unwrap();
    assert!(sup_error(&res.rmat_rec, &data.curve) < 1e-5);
    for t in [-2.5, -1.0, 0.25] {
        assert!((res.rmat_at(t) - data.curve.at(t)).amax() < 1e-5);
    }
}

#[test]
fn diagonal_i0_estimator_still_reconstructs() {
    let data = constant(1.0, 1, 3.0);
    let opts = ReconstructOptions {
        i0_estimator: I0Estimator::Diagonal(ThirdDerivativeStencil::Richardson),
        ..Default::default()
    };
    let res = reconstruct(&data.grid, &opts).unwrap();
    assert!(sup_error(&res.rmat_rec, &data.curve) < 1e-3);
}

#[test]
fn sphere_conjugate_pairs_sit_at_distance_pi() {
    let data = constant(1.0, 1, 5.0);
    let res = reconstruct(&data.grid, &ReconstructOptions::default()).unwrap();
    assert!(!res.conjugates.is_empty());
    for (r, t) in &res.conjugates {
        assert!(((r - t).abs() - PI).abs() <= 1e-3, "({r}, {t})");
    }
    // partners r = t ± π inside [−T, ε)
    let expected: usize = res
        .t_grid
        .iter()
        .map(|&t| [t + PI, t - PI].iter().filter(|&&r| (-5.0..EPS - STEP).contains(&r)).count())
        .sum();
    assert_eq!(res.conjugates.len(), expected);
}

#[test]
fn recovered_shape_operator_matches_the_data_on_i0() {
    let data = varying(3.0);
    let res = reconstruct(&data.grid, &ReconstructOptions::default()).unwrap();
    let mut checked = 0;
    for (ir, &r) in data.grid.r_grid.iter().enumerate().step_by(8) {
        for (it, &t) in data.grid.t_grid.iter().enumerate().step_by(16) {
            let Some(s) = data.grid.cell(ir, it) else { continue };
            if (r - t).abs() < 0.1 {
                continue;
            }
            let rec = recover_shape_and_k(&res, r, t).unwrap();
            let s_rec = rec.s.unwrap();
            assert!((&s_rec - s).amax() < 1e-6 * (1.0 + s.amax()), "({r}, {t})");
            checked += 1;
        }
    }
    assert!(checked > 50);
    let diag = recover_shape_and_k(&res, -1.0, -1.0).unwrap();
    assert!(diag.s.is_none() && diag.k.unwrap().amax() == 0.0);
    assert!(recover_shape_and_k(&res, -1.003, -1.0).is_err());
}

#[test]
fn gauge_invariance_of_the_march() {
    let data = varying(3.0);
    let access = DataAccess::new(&data.grid, true);
    let rmat = estimate_curvature_riccati(&access).unwrap().curve;
    let init = initialize_jacobi_at_zero(&access, &rmat, &AnchorPolicy::default()).unwrap();
    let gauge = DMatrix::from_row_slice(2, 2, &[1.3, -0.4, 0.7, 0.9]);
    let a = march_reconstruct(&access, &rmat, &init, &MarchOptions::default()).unwrap();
    let b = march_reconstruct(&access, &rmat, &init.right_mul(&gauge), &MarchOptions::default()).unwrap();
    let change = (0..a.rmat_rec.len()).map(|i| (&a.rmat_rec.values[i] - &b.rmat_rec.values[i]).amax()).fold(0.0, f64::max);
    assert!(change <= 1e-8, "{change:e}");
    for (ir, it) in [(10, 40), (200, 300), (350, 5)] {
        let expected = a.jmat.get(ir, it) * &gauge;
        assert!((b.jmat.get(ir, it) - expected).amax() < 1e-8);
    }
}

#[test]
fn halving_the_block_size_barely_changes_the_result() {
    let data = constant(-1.0, 1, 3.0);
    let coarse = reconstruct(&data.grid, &ReconstructOptions::default()).unwrap();
    let mut opts = ReconstructOptions::default();
    opts.march.initial_steps = Some(8);
    let fine = reconstruct(&data.grid, &opts).unwrap();
    assert_eq!(fine.diagnostics.blocks.len(), 2 * coarse.diagnostics.blocks.len());
    let change = (0..coarse.rmat_rec.len())
        .map(|i| (&coarse.rmat_rec.values[i] - &fine.rmat_rec.values[i]).amax())
        .fold(0.0, f64::max);
    assert!(change <= 1e-4);
}

#[test]
fn unconverged_blocks_are_reported_as_solver_errors() {
    let data = constant(1.0, 1, 2.0);
    let mut opts = ReconstructOptions::<f64>::default();
    opts.march.max_iterations = 2;
    opts.march.stagnation_factor = 1.0;
    match reconstruct(&data.grid, &opts) {
        Err(DixError::Solver { block, r_hi, .. }) => assert_eq!((block, r_hi), (0, 0.0)),
        other => panic!("expected a solver error, got {:?}", other.map(|r| r.diagnostics)),
    }
}

#[test]
fn result_files_round_trip() {
    let data = constant(1.0, 1, 4.0);
    let res = reconstruct(&data.grid, &ReconstructOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_rmat_csv(&res.rmat_rec, &mut buf).unwrap();
    let back: CurvatureCurve<f64> = read_result_curve(buf.as_slice()).unwrap();
    assert_eq!(back.len(), res.rmat_rec.len());
    assert!(sup_error(&back, &res.rmat_rec) < 1e-15);

    let mut buf = Vec::new();
    write_conjugates_csv(&res.conjugates, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), res.conjugates.len() + 1);

    let mut buf = Vec::new();
    write_diagnostics_json(&res.diagnostics, &mut buf).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(json["blocks"].as_array().unwrap().len(), res.diagnostics.blocks.len());
    assert!(json["anchors"].as_array().unwrap().len() >= 2);
}
