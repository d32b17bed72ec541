use finsler_dix::catalog::{chart_by_id, normalize};
use finsler_dix::forward::{synthesize_sphere_data, ForwardData};
use finsler_dix::geodesic::{integrate_geodesic, GeodesicOptions};
use finsler_dix::inverse::{reconstruct, ReconstructOptions};
use finsler_dix::metric::{
    assemble_metric, focal_times, normal_coordinate_metric, surface_normal_jacobi, write_focal_csv,
    write_metric_csv, SurfacePatch,
};
use finsler_dix::DixError;
use nalgebra::DVector;
use std::f64::consts::PI;

const EPS: f64 = 0.5;
const STEP: f64 = EPS / 64.0;

fn z_line(m: usize, values: &[f64]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|&a| {
            let mut z = vec![0.0; m];
            z[0] = a;
            z
        })
        .collect()
}

fn patch(id: &str, center: &[f64], axis: &[f64], radius: f64, z: &[Vec<f64>], horizon: f64) -> SurfacePatch<f64> {
    let chart = chart_by_id::<f64>(id).unwrap();
    let p = SurfacePatch::geodesic_sphere(
        chart.as_ref(),
        &DVector::from_row_slice(center),
        &DVector::from_row_slice(axis),
        radius,
        z,
        horizon,
        STEP,
    )
    .unwrap();
    p.validate(Some(chart.as_ref())).unwrap();
    p
}

#[test]
fn euclidean_circle_metric_scales_with_distance_to_center() {
    let rho = 1.0;
    let p = patch("euclidean-2", &[0.0, 0.0], &[1.0, 0.0], rho, &z_line(1, &[-0.4, 0.0, 0.7]), 2.0);
    for iz in 0..p.samples.len() {
        // the circle has circumference parameter ρ dθ, so g_θθ(0) = ρ²
        let g0 = assemble_metric(&p, iz, 0.0).unwrap();
        assert!((g0[(0, 0)] - rho * rho).abs() < 1e-6);
        for t in [-0.9, -0.5, -0.25] {
            let g = assemble_metric(&p, iz, t).unwrap();
            let expected = (rho + t).powi(2) / (rho * rho) * g0[(0, 0)];
            assert!((g[(0, 0)] - expected).abs() < 1e-6, "t = {t}: {} vs {expected}", g[(0, 0)]);
        }
        let focal = focal_times(&p, iz).unwrap();
        assert_eq!(focal.len(), 1, "{focal:?}");
        assert!((focal[0] + rho).abs() < 1e-4);
        assert!(matches!(assemble_metric(&p, iz, -rho), Err(DixError::DegenerateMetric { .. })));
    }
}

#[test]
fn sphere_metric_follows_sine_law_and_has_antipodal_focal_points() {
    let r0 = 0.75;
    let p = patch("sphere-2", &[0.6, 0.0], &[0.0, 1.0], r0, &z_line(1, &[-0.3, 0.2]), 4.5);
    for iz in 0..p.samples.len() {
        let s = &p.samples[iz];
        assert!((s.shape[(0, 0)] - 1.0 / r0.tan()).abs() < 1e-6);
        let g0 = assemble_metric(&p, iz, 0.0).unwrap()[(0, 0)];
        assert!((g0 - r0.sin().powi(2)).abs() < 1e-6);
        for t in [-0.5, -1.5, -2.5, -3.0] {
            let g = assemble_metric(&p, iz, t).unwrap()[(0, 0)];
            let law = (r0 + t).sin().powi(2) / r0.sin().powi(2) * g0;
            assert!((g - law).abs() < 1e-5, "t = {t}: {g} vs {law}");
        }
        let focal = focal_times(&p, iz).unwrap();
        assert_eq!(focal.len(), 2, "{focal:?}");
        assert!((focal[0] + r0).abs() < 1e-4);
        assert!((focal[1] + r0 + PI).abs() < 1e-4);
    }
}

#[test]
fn normal_direction_block_is_exact() {
    let z = vec![vec![0.0, 0.0], vec![0.2, -0.1], vec![-0.15, 0.3]];
    let p = patch("sphere-3", &[0.6, 0.0, 0.0], &[0.0, 1.0, 0.0], 0.5, &z, 1.0);
    for iz in 0..z.len() {
        for t in [0.0, -0.2, -0.45] {
            let g = assemble_metric(&p, iz, t).unwrap();
            assert_eq!(g[(2, 2)], 1.0);
            for k in 0..2 {
                assert!(g[(k, 2)].abs() < 1e-10 && g[(2, k)].abs() < 1e-10);
            }
            assert!(g.clone().symmetric_eigenvalues().iter().all(|e| *e > 0.0));
            let d = surface_normal_jacobi(&p, iz, t).unwrap();
            assert_eq!(d.differential.nrows(), 3);
        }
        // isotropic in three dimensions: both directions focus together
        let focal = focal_times(&p, iz).unwrap();
        assert!((focal[0] + 0.5).abs() < 1e-4, "{focal:?}");
    }
}

#[test]
fn flat_randers_sphere_focuses_at_its_center() {
    let z = z_line(1, &[-0.5, 0.0, 0.5]);
    let p = patch("randers-flat-2", &[0.0, 0.0], &[1.0, 0.5], 0.75, &z, 1.5);
    for iz in 0..z.len() {
        let focal = focal_times(&p, iz).unwrap();
        assert_eq!(focal.len(), 1, "{focal:?}");
        assert!((focal[0] + 0.75).abs() < 1e-4);
    }
}

#[test]
fn out_of_horizon_and_bad_step_are_rejected() {
    let p = patch("euclidean-2", &[0.0, 0.0], &[1.0, 0.0], 1.0, &z_line(1, &[0.0]), 2.0);
    assert!(matches!(surface_normal_jacobi(&p, 0, -2.5), Err(DixError::Domain(_))));
    assert!(matches!(surface_normal_jacobi(&p, 0, 0.1), Err(DixError::Domain(_))));
    let chart = chart_by_id::<f64>("euclidean-2").unwrap();
    let err = SurfacePatch::geodesic_sphere(
        chart.as_ref(),
        &DVector::zeros(2),
        &DVector::from_row_slice(&[1.0, 0.0]),
        1.0 + STEP / 3.0,
        &z_line(1, &[0.0]),
        2.0,
        STEP,
    );
    assert!(matches!(err, Err(DixError::Config(_))));
}

fn forward(id: &str, x: &[f64], v: &[f64], horizon: f64) -> ForwardData<f64> {
    let chart = chart_by_id::<f64>(id).unwrap();
    let x = DVector::from_row_slice(x);
    let v = normalize(chart.as_ref(), &x, &DVector::from_row_slice(v));
    let frame = integrate_geodesic(chart.as_ref(), &x, &v, (-horizon, EPS), STEP, &GeodesicOptions::default()).unwrap();
    synthesize_sphere_data(chart.as_ref(), &frame, EPS, horizon, STEP).unwrap()
}

#[test]
fn reconstructed_metric_matches_forward_metric() {
    for (id, x, v) in [
        ("sphere-2", vec![0.6, 0.0], vec![0.0, 1.0]),
        ("randers-perturbed-2", vec![0.3, -0.2], vec![1.0, 0.3]),
    ] {
        let data = forward(id, &x, &v, 3.0);
        let result = reconstruct(&data.grid, &ReconstructOptions::default()).unwrap();
        let t_center = -1.0;
        let rec = SurfacePatch::from_reconstruction(&result.rmat_rec, &data.grid, t_center).unwrap();
        rec.validate(None).unwrap();
        let mut truth = rec.clone();
        truth.samples[0] = rec.samples[0].with_curvature(data.curve.clone());
        let t_grid: Vec<f64> = (0..=16).map(|k| -0.05 * k as f64).collect();
        let a = normal_coordinate_metric(&rec, &t_grid).unwrap();
        let b = normal_coordinate_metric(&truth, &t_grid).unwrap();
        for (ga, gb) in a.g[0].iter().zip(&b.g[0]) {
            let (ga, gb) = (ga.as_ref().unwrap(), gb.as_ref().unwrap());
            assert!((ga - gb).amax() <= 1e-3 * gb.amax(), "{id}: {ga} vs {gb}");
        }
        assert_eq!(a.focal_sets[0].len(), b.focal_sets[0].len());
        for (fa, fb) in a.focal_sets[0].iter().zip(&b.focal_sets[0]) {
            assert!((fa - fb).abs() < 1e-3);
        }
    }
}

#[test]
fn csv_writers_mark_focal_points() {
    let p = patch("euclidean-2", &[0.0, 0.0], &[1.0, 0.0], 1.0, &z_line(1, &[0.0, 0.3]), 2.0);
    let metric = normal_coordinate_metric(&p, &[0.0, -0.5, -1.0]).unwrap();
    let mut buf = Vec::new();
    write_metric_csv(&metric, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "z1,t,valid,g11,g12,g21,g22");
    assert_eq!(lines.len(), 7);
    assert!(lines[3].contains(",0,nan"));
    let mut buf = Vec::new();
    write_focal_csv(&metric, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
}
