use std::sync::Arc;

use finsler_dix::catalog::{
    chart_by_id, curvature_operator_full, fundamental_tensor, geodesic_spray, inner, normalize, numeric_twin,
    perturbed_from_fields, BoxDomain, ChartKind, ConformalChart, EuclideanChart, FinslerChart, NumericChart,
    CATALOG_IDS,
};
use finsler_dix::DixError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn vec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Metric of the constant-curvature conformal charts written out directly.
fn conformal_metric(k: f64, x: &DVector<f64>) -> DMatrix<f64> {
    let lambda = 2.0 / (1.0 + k * x.norm_squared());
    DMatrix::identity(x.len(), x.len()) * lambda * lambda
}

fn diff4<F: Fn(&DVector<f64>) -> DMatrix<f64>>(f: &F, x: &DVector<f64>, i: usize, h: f64) -> DMatrix<f64> {
    let at = |s: f64| {
        let mut y = x.clone();
        y[i] += s * h;
        f(&y)
    };
    (at(-2.0) - at(-1.0) * 8.0 + at(1.0) * 8.0 - at(2.0)) / (12.0 * h)
}

/// Christoffel symbols `gamma[i][(j, k)]` by differentiating the metric.
fn christoffel<F: Fn(&DVector<f64>) -> DMatrix<f64>>(metric: &F, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let n = x.len();
    let ginv = metric(x).try_inverse().unwrap();
    let dg: Vec<DMatrix<f64>> = (0..n).map(|a| diff4(metric, x, a, 1e-3)).collect();
    (0..n)
        .map(|i| {
            DMatrix::from_fn(n, n, |j, k| {
                (0..n).map(|l| 0.5 * ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)])).sum()
            })
        })
        .collect()
}

/// `(R_v)^i_k = R^i_{jkl} v^j v^l` from Christoffel symbols and their derivatives.
fn christoffel_curvature<F: Fn(&DVector<f64>) -> DMatrix<f64>>(
    metric: &F,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let gam = christoffel(metric, x);
    // dgam[a][i] = ∂_a Γ^i
    let dgam: Vec<Vec<DMatrix<f64>>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|i| diff4(&|y: &DVector<f64>| christoffel(metric, y)[i].clone(), x, a, 1e-3))
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, k| {
        let mut acc = 0.0;
        for j in 0..n {
            for l in 0..n {
                let mut r = dgam[k][i][(l, j)] - dgam[l][i][(k, j)];
                for m in 0..n {
                    r += gam[i][(k, m)] * gam[m][(l, j)] - gam[i][(l, m)] * gam[m][(k, j)];
                }
                acc += r * v[j] * v[l];
            }
        }
        acc
    })
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

#[test]
fn euclidean_is_flat() {
    let c = EuclideanChart::<f64>::new(3);
    let (x, v) = (vec(&[1.0, -2.0, 0.5]), vec(&[0.3, 0.1, -0.7]));
    assert_eq!(fundamental_tensor(&c, &x, &v).unwrap(), DMatrix::identity(3, 3));
    let s = geodesic_spray(&c, &x, &v).unwrap();
    assert_eq!(s.g.norm() + s.n.norm(), 0.0);
    assert_eq!(curvature_operator_full(&c, &x, &v).unwrap().r_full.norm(), 0.0);
}

#[test]
fn conformal_metric_matches_closed_form() {
    for (k, chart) in [(1.0, ConformalChart::sphere(2)), (-1.0, ConformalChart::hyperbolic(2))] {
        let x = vec(&[0.3, -0.4]);
        for v in [vec(&[1.0, 0.0]), vec(&[-0.2, 3.0])] {
            let g = fundamental_tensor(&chart, &x, &v).unwrap();
            assert!((g - conformal_metric(k, &x)).norm() < 1e-14);
        }
    }
}

#[test]
fn randers_metric_matches_symbolic_hessian() {
    // F = |v| + 0.3 v1 at v = (1, 0): F = 1.3, u = (1, 0), l = u + b = (1.3, 0)
    // g = (F/|v|)(I − u uᵀ) + l lᵀ = diag(1.69, 1.3)
    let chart = chart_by_id::<f64>("randers-flat-2").unwrap();
    let g = fundamental_tensor(chart.as_ref(), &vec(&[0.0, 0.0]), &vec(&[1.0, 0.0])).unwrap();
    assert!((g - DMatrix::from_row_slice(2, 2, &[1.69, 0.0, 0.0, 1.3])).norm() < 1e-14);

    // generic direction against a finite-difference Hessian of F²/2
    let v = vec(&[0.4, -1.1]);
    let g = fundamental_tensor(chart.as_ref(), &vec(&[0.0, 0.0]), &v).unwrap();
    let half_energy = |w: &DVector<f64>| {
        let f = w.norm() + 0.3 * w[0];
        DMatrix::from_element(1, 1, 0.5 * f * f)
    };
    let fd = DMatrix::from_fn(2, 2, |i, j| {
        diff4(&|w: &DVector<f64>| diff4(&half_energy, w, j, 1e-3), &v, i, 1e-3)[(0, 0)]
    });
    assert!((g - fd).norm() < 1e-8);
}

#[test]
fn riemannian_spray_is_christoffel_contraction() {
    let x = vec(&[0.25, -0.35]);
    let v = vec(&[0.8, 0.45]);
    for (k, id) in [(1.0, "sphere-2"), (-1.0, "hyperbolic-2")] {
        let metric = |y: &DVector<f64>| conformal_metric(k, y);
        let gam = christoffel(&metric, &x);
        let expect = DVector::from_fn(2, |i, _| 0.5 * (v.transpose() * &gam[i] * &v)[(0, 0)]);
        let analytic = chart_by_id::<f64>(id).unwrap();
        let twin = numeric_twin(analytic.clone());
        for chart in [analytic.as_ref(), &twin as &dyn FinslerChart<f64>] {
            let s = geodesic_spray(chart, &x, &v).unwrap();
            assert!((&s.g - &expect).norm() < 1e-8, "{}: {} vs {}", chart.id(), s.g, expect);
        }
    }
}

#[test]
fn curvature_agrees_with_christoffel_oracle() {
    for (k, id) in [(1.0, "sphere-2"), (-1.0, "hyperbolic-2"), (1.0, "sphere-3"), (-1.0, "hyperbolic-3")] {
        let chart = chart_by_id::<f64>(id).unwrap();
        let n = chart.dim();
        let metric = |y: &DVector<f64>| conformal_metric(k, y);
        for s in 0..4 {
            let x = DVector::from_fn(n, |i, _| 0.3 * ((s * n + i) as f64).sin());
            let v = DVector::from_fn(n, |i, _| ((2 * s + i) as f64).cos() + 0.2);
            let v = normalize(chart.as_ref(), &x, &v);
            let r = curvature_operator_full(chart.as_ref(), &x, &v).unwrap().r_full;
            let oracle = christoffel_curvature(&metric, &x, &v);
            assert!(rel(&r, &oracle) < 1e-6, "{id}: {r} vs {oracle}");
        }
    }
}

#[test]
fn constant_curvature_acts_as_multiple_of_identity_on_normal_space() {
    for (k, id) in [(1.0, "sphere-2"), (-1.0, "hyperbolic-2"), (1.0, "sphere-3")] {
        let chart = chart_by_id::<f64>(id).unwrap();
        let n = chart.dim();
        let x = DVector::from_fn(n, |i, _| 0.2 - 0.15 * i as f64);
        let v = normalize(chart.as_ref(), &x, &DVector::from_fn(n, |i, _| 1.0 + i as f64));
        let g = fundamental_tensor(chart.as_ref(), &x, &v).unwrap();
        let r = curvature_operator_full(chart.as_ref(), &x, &v).unwrap().r_full;
        // a g-orthogonal vector to v
        let mut w = DVector::from_fn(n, |i, _| if i == 0 { -v[1] } else if i == 1 { v[0] } else { 0.0 });
        w -= &v * (inner(&g, &w, &v) / inner(&g, &v, &v));
        assert!((&r * &w - &w * k).norm() < 1e-12 * w.norm().max(1.0));
        assert!((&r * &v).norm() < 1e-12);
    }
}

#[test]
fn numeric_twins_reproduce_analytic_charts() {
    for id in CATALOG_IDS.iter().filter(|id| !id.starts_with("randers-perturbed")) {
        let analytic = chart_by_id::<f64>(id).unwrap();
        let twin = numeric_twin(analytic.clone());
        assert_eq!(twin.kind(), ChartKind::Numeric);
        let n = analytic.dim();
        for s in 0..6 {
            let x = DVector::from_fn(n, |i, _| 0.4 * ((3 * s + i) as f64 * 0.9).sin());
            let v = DVector::from_fn(n, |i, _| ((s + 2 * i) as f64 * 1.3).cos() + 0.3);
            let v = normalize(analytic.as_ref(), &x, &v);
            let ga = fundamental_tensor(analytic.as_ref(), &x, &v).unwrap();
            let gn = fundamental_tensor(&twin, &x, &v).unwrap();
            assert!(rel(&gn, &ga) < 1e-5, "{id} g");
            let sa = geodesic_spray(analytic.as_ref(), &x, &v).unwrap();
            let sn = geodesic_spray(&twin, &x, &v).unwrap();
            assert!((&sn.g - &sa.g).norm() < 1e-5 * sa.g.norm().max(1.0), "{id} G");
            assert!(rel(&sn.n, &sa.n) < 1e-5, "{id} N");
            let ra = curvature_operator_full(analytic.as_ref(), &x, &v).unwrap();
            let rn = curvature_operator_full(&twin, &x, &v).unwrap();
            assert!(rel(&rn.r_full, &ra.r_full) < 1e-5, "{id} R");
            assert!(rn.warning.is_none());
        }
    }
}

#[test]
fn perturbed_randers_is_not_reversible_and_has_curvature() {
    let chart = chart_by_id::<f64>("randers-perturbed-2").unwrap();
    assert!(!chart.reversible() && !chart.riemannian());
    let x = vec(&[0.3, -0.2]);
    let v = vec(&[1.0, 0.3]);
    assert!((chart.finsler(&x, &v) - chart.finsler(&x, &-&v)).abs() > 0.05);
    let v = normalize(chart.as_ref(), &x, &v);
    let r = curvature_operator_full(chart.as_ref(), &x, &v).unwrap().r_full;
    assert!(r.norm() > 1e-3);
}

#[test]
fn perturbed_fields_parse_from_text() {
    let c = perturbed_from_fields::<f64>(2, Some(0.1), Some("0.2;0,0.1"), Some("1")).unwrap();
    let (x, v) = (vec(&[0.5, 0.5]), vec(&[0.0, 2.0]));
    // |v|(1 + 0.1) + (0.2, 0.05)·v
    assert!((c.finsler(&x, &v) - (2.2 + 0.1)).abs() < 1e-14);
    assert!(perturbed_from_fields::<f64>(2, None, Some("0.2"), None).is_err());
    assert!(perturbed_from_fields::<f64>(2, None, Some("2;0"), None).is_err());
}

#[test]
fn rejects_bad_inputs() {
    let c = ConformalChart::<f64>::hyperbolic(2);
    let zero = DVector::zeros(2);
    assert!(matches!(fundamental_tensor(&c, &vec(&[0.1, 0.1]), &zero), Err(DixError::Domain(_))));
    assert!(matches!(geodesic_spray(&c, &vec(&[0.8, 0.8]), &vec(&[1.0, 0.0])), Err(DixError::Domain(_))));
    assert!(matches!(
        curvature_operator_full(&c, &vec(&[0.1, 0.1, 0.1]), &vec(&[1.0, 0.0, 0.0])),
        Err(DixError::Dimension(_))
    ));
    assert!(chart_by_id::<f64>("torus-2").is_err());
    assert!(chart_by_id::<f64>("sphere-1").is_err());
}

#[test]
fn indefinite_norm_reports_eigenvalues() {
    let c = NumericChart::new("indefinite", 2, BoxDomain::cube(2, 1.0), |_x: &DVector<f64>, v: &DVector<f64>| {
        (v[0] * v[0] - 0.5 * v[1] * v[1]).abs().sqrt()
    });
    match fundamental_tensor(&c, &vec(&[0.0, 0.0]), &vec(&[1.0, 0.1])) {
        Err(DixError::Model { eigenvalues, .. }) => assert!(eigenvalues.iter().any(|e| *e < 0.0)),
        other => panic!("expected a model error, got {other:?}"),
    }
}

#[test]
fn single_precision_charts() {
    let c = ConformalChart::<f32>::sphere(2);
    let x = DVector::from_vec(vec![0.1f32, 0.2]);
    let v = normalize(&c, &x, &DVector::from_vec(vec![1.0f32, 0.0]));
    let r = curvature_operator_full(&c, &x, &v).unwrap().r_full;
    let g = fundamental_tensor(&c, &x, &v).unwrap();
    assert!((r.trace() - 1.0).abs() < 1e-5 && (&r * &v).norm() < 1e-5);
    assert!((g[(0, 0)] - g[(1, 1)]).abs() < 1e-6);
    let twin = numeric_twin(Arc::new(c) as Arc<dyn FinslerChart<f32>>);
    assert!(curvature_operator_full(&twin, &x, &v).unwrap().warning.is_some());
}

fn catalog() -> Vec<Arc<dyn FinslerChart<f64>>> {
    CATALOG_IDS.iter().map(|id| chart_by_id::<f64>(id).unwrap()).collect()
}

fn sample(chart: &dyn FinslerChart<f64>, xs: &[f64], vs: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let n = chart.dim();
    let scale = if chart.id().starts_with("hyperbolic") { 0.5 } else { 1.5 };
    let x = DVector::from_fn(n, |i, _| xs[i] * scale / (n as f64).sqrt());
    let mut v = DVector::from_fn(n, |i, _| vs[i]);
    if v.norm() < 1e-3 {
        v[0] = 1.0;
    }
    (x, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn catalog_invariants(
        which in 0usize..CATALOG_IDS.len(),
        xs in prop::array::uniform3(-1.0f64..1.0),
        vs in prop::array::uniform3(-2.0f64..2.0),
        lambda in 0.1f64..5.0,
    ) {
        let chart = &catalog()[which];
        let (x, v) = sample(chart.as_ref(), &xs, &vs);
        let f = chart.finsler(&x, &v);
        prop_assert!(f > 0.0);
        prop_assert!((chart.finsler(&x, &(&v * lambda)) - lambda * f).abs() <= 1e-10 * lambda * f);

        let g = fundamental_tensor(chart.as_ref(), &x, &v).unwrap();
        prop_assert!(g.clone().symmetric_eigenvalues().iter().all(|e| *e > 0.0));
        if chart.riemannian() {
            let g2 = fundamental_tensor(chart.as_ref(), &x, &(&v * -1.0 + DVector::from_element(v.len(), 0.3))).unwrap();
            prop_assert!((&g2 - &g).norm() <= 1e-10 * g.norm());
        }

        let s1 = geodesic_spray(chart.as_ref(), &x, &v).unwrap();
        let s2 = geodesic_spray(chart.as_ref(), &x, &(&v * lambda)).unwrap();
        prop_assert!((&s2.g - &s1.g * (lambda * lambda)).norm() <= 1e-8 * (lambda * lambda * s1.g.norm()).max(1.0));

        let u = normalize(chart.as_ref(), &x, &v);
        let gu = fundamental_tensor(chart.as_ref(), &x, &u).unwrap();
        let r = curvature_operator_full(chart.as_ref(), &x, &u).unwrap().r_full;
        let scale = r.norm().max(1.0);
        prop_assert!((&r * &u).norm() <= 1e-7 * scale, "R v = {}", &r * &u);
        let gr = &gu * &r;
        prop_assert!((&gr - gr.transpose()).norm() <= 1e-7 * scale * gu.norm());
    }
}
