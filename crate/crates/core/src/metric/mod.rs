//! Surface normal coordinates of a geodesic sphere and the Riemannian metric
//! `g_{γ̇}` they induce.
//!
//! The differential of the surface normal exponential map `φ(x, t)` sends a
//! tangent vector `v` of the sphere to the Jacobi field with `J(0) = v`,
//! `D_t J(0) = S v`. In the parallel frame this is a matrix ODE driven by the
//! curvature matrix, so the metric `g_jk = g(J_j, J_k)` (and `g_nn = 1`,
//! `g_nk = 0`) follows from the curvature and the shape operator alone.

mod io;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::catalog::{fundamental_tensor, normalize, FinslerChart};
use crate::error::{DixError, Result};
use crate::forward::{
    frame_curvature, jacobi_at, propagate_jacobi, shape_matrix, steps_for, CurvatureCurve, JacobiPair,
    SphereDataGrid,
};
use crate::geodesic::{initial_normal_frame, integrate_geodesic, GeodesicOptions};
use crate::numerics::{bisect, golden_min, sigma_max, sigma_min, UniformSeries};
use crate::scalar::{abs, lit, to_f64, Real};

pub use io::{write_focal_csv, write_metric_csv};

/// Relative `σ_min(J)` below which `(z, t)` counts as focal.
pub const FOCAL_THRESHOLD: f64 = 1e-8;

/// One point `α(z)` of the sphere together with everything needed to follow
/// its normal geodesic backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample<T: Real> {
    pub z: Vec<T>,
    /// `α(z)` in chart coordinates, when known.
    pub position: Option<DVector<T>>,
    /// Outward unit normal `ν(α(z))` in chart coordinates, when known.
    pub normal: Option<DVector<T>>,
    /// Shape operator of the sphere at `α(z)` in the parallel frame.
    pub shape: DMatrix<T>,
    /// Frame components of `∂α/∂z_k` as columns.
    pub basis: DMatrix<T>,
    /// Curvature matrix along the normal geodesic, with `α(z)` at `t = 0`.
    pub curvature: CurvatureCurve<T>,
    /// The normal geodesic left the chart before the requested horizon.
    pub truncated: bool,
}

impl<T: Real> PatchSample<T> {
    /// The same sample driven by another curvature curve, e.g. a reconstructed one.
    pub fn with_curvature(&self, curvature: CurvatureCurve<T>) -> Self {
        Self { curvature, ..self.clone() }
    }
}

/// A patch of a geodesic sphere `Σ` sampled on a grid of `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePatch<T: Real> {
    pub chart_id: String,
    pub dim: usize,
    /// Geodesic radius of the sphere.
    pub radius: T,
    pub samples: Vec<PatchSample<T>>,
}

/// Spherical angles on the unit tangent sphere: `z ↦ cos|z| e_n + sin|z| ẑ`
/// with `ẑ = Σ z_k e_k / |z|`, plus the partials.
fn angular<T: Real>(z: &[T], e: &[DVector<T>], w0: &DVector<T>) -> (DVector<T>, Vec<DVector<T>>) {
    let rho = z.iter().fold(T::zero(), |a, b| a + *b * *b).sqrt();
    let tangent = z.iter().zip(e).fold(DVector::zeros(w0.len()), |acc, (zk, ek)| acc + ek * *zk);
    if rho < lit(1e-12) {
        return (w0.clone(), e.to_vec());
    }
    let (s, c) = (rho.sin(), rho.cos());
    let sinc = s / rho;
    let dsinc = (rho * c - s) / (rho * rho);
    let u = w0 * c + &tangent * sinc;
    let partials = z
        .iter()
        .zip(e)
        .map(|(zk, ek)| w0 * (-s * *zk / rho) + ek * sinc + &tangent * (dsinc * *zk / rho))
        .collect();
    (u, partials)
}

impl<T: Real + 'static> SurfacePatch<T> {
    /// Geodesic sphere of radius `radius` centred at `center`, parameterized by
    /// angles `z` around the unit direction `axis` (normalized to `F = 1`).
    ///
    /// Each normal geodesic is integrated over `[−horizon, 0]` relative to its
    /// point on the sphere; `radius` and `horizon` must be multiples of `step`.
    pub fn geodesic_sphere(
        chart: &dyn FinslerChart<T>,
        center: &DVector<T>,
        axis: &DVector<T>,
        radius: T,
        z_samples: &[Vec<T>],
        horizon: T,
        step: T,
    ) -> Result<Self> {
        let n = chart.dim();
        if !(radius > T::zero() && horizon > T::zero()) {
            return Err(DixError::Config("radius and horizon must be positive".into()));
        }
        for x in [radius, horizon] {
            let q = x / step;
            if abs(q - q.round()) > lit(1e-6) {
                return Err(DixError::Config("radius and horizon must be integer multiples of the step".into()));
            }
        }
        if z_samples.iter().any(|z| z.len() != n - 1) {
            return Err(DixError::Dimension(format!("patch coordinates need {} components", n - 1)));
        }
        let w0 = normalize(chart, center, axis);
        let g0 = fundamental_tensor(chart, center, &w0)?;
        let e = initial_normal_frame(&g0, &w0);
        let samples = z_samples
            .par_iter()
            .map(|z| Self::sample(chart, center, &w0, &e, z, radius, horizon, step))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { chart_id: chart.id().to_string(), dim: n, radius, samples })
    }

    #[allow(clippy::too_many_arguments)]
    fn sample(
        chart: &dyn FinslerChart<T>,
        center: &DVector<T>,
        w0: &DVector<T>,
        e: &[DVector<T>],
        z: &[T],
        radius: T,
        horizon: T,
        step: T,
    ) -> Result<PatchSample<T>> {
        let (u, du) = angular(z, e, w0);
        let f = chart.finsler(center, &u);
        let w = &u / f;
        let g = fundamental_tensor(chart, center, &w)?;
        // ∂(u/F) = (∂u − w g_w(w, ∂u)) / F
        let dw: Vec<DVector<T>> = du.iter().map(|d| (d - &w * (w.transpose() * &g * d)[(0, 0)]) / f).collect();

        let frame = integrate_geodesic(chart, center, &w, (radius - horizon, radius), step, &GeodesicOptions::default())?;
        let start = frame.index_of(T::zero()).ok_or_else(|| DixError::Domain("center not on the sample grid".into()))?;
        let end = frame.len() - 1;
        if frame.forward_exit.is_some() || abs(frame.times[end] - radius) > step * lit(1e-6) {
            return Err(DixError::Domain(format!(
                "normal geodesic for z = {:?} leaves chart {} before reaching the sphere",
                z.iter().map(|c| to_f64(*c)).collect::<Vec<_>>(),
                chart.id()
            )));
        }
        let (curve, _) = frame_curvature(chart, &frame)?;
        let curvature = UniformSeries::new(curve.start - radius, curve.step, curve.values);

        let normal_frame = frame.normal_frame(start);
        let c = DMatrix::from_columns(&dw.iter().map(|d| normal_frame.transpose() * &g * d).collect::<Vec<_>>());
        let pair = jacobi_at(&curvature, -radius, T::zero(), steps_for(radius, step))?;
        let shape = shape_matrix(&pair).ok_or_else(|| {
            DixError::Domain(format!("radius {radius} reaches a conjugate point of the center"))
        })?;
        Ok(PatchSample {
            z: z.to_vec(),
            position: Some(frame.positions[end].clone()),
            normal: Some(frame.velocities[end].clone()),
            shape,
            basis: pair.j * c,
            curvature,
            truncated: frame.truncated(),
        })
    }
}

impl<T: Real> SurfacePatch<T> {
    /// The sphere through `γ(0)` centred at `γ(t_center)`, seen through the
    /// reconstruction: the shape operator comes from the data at `(0, t_center)`
    /// and the curvature from the march (`rmat_rec`). Coordinates on `Σ` are the frame
    /// components at `γ(0)`.
    pub fn from_reconstruction(
        rmat_rec: &CurvatureCurve<T>,
        grid: &SphereDataGrid<T>,
        t_center: T,
    ) -> Result<Self> {
        let (ir, it) = match (grid.r_index(T::zero()), grid.t_index(t_center)) {
            (Some(ir), Some(it)) => (ir, it),
            _ => return Err(DixError::Domain(format!("t = {t_center} is not on the data grid"))),
        };
        let shape = grid.cell(ir, it).cloned().ok_or_else(|| {
            DixError::Domain(format!("s(0, {t_center}) is invalid: the center is conjugate to γ(0)"))
        })?;
        let m = shape.nrows();
        Ok(Self {
            chart_id: String::new(),
            dim: grid.dim,
            radius: -t_center,
            samples: vec![PatchSample {
                z: vec![T::zero(); m],
                position: None,
                normal: None,
                shape,
                basis: DMatrix::identity(m, m),
                curvature: rmat_rec.clone(),
                truncated: false,
            }],
        })
    }

    /// Checks `F(α, ν) = 1` and the symmetry of `S` to `1e-7`.
    pub fn validate(&self, chart: Option<&dyn FinslerChart<T>>) -> Result<()> {
        for s in &self.samples {
            let asym = to_f64((&s.shape - s.shape.transpose()).amax());
            if asym > 1e-7 * to_f64(s.shape.amax()).max(1.0) {
                return Err(DixError::Domain(format!("shape operator at z = {:?} is not symmetric ({asym:e})", zf(&s.z))));
            }
            if let (Some(chart), Some(x), Some(nu)) = (chart, &s.position, &s.normal) {
                let f = to_f64(chart.finsler(x, nu));
                if (f - 1.0).abs() > 1e-7 {
                    return Err(DixError::Domain(format!("normal at z = {:?} has F = {f}", zf(&s.z))));
                }
            }
        }
        Ok(())
    }

    fn sample_at(&self, iz: usize) -> Result<&PatchSample<T>> {
        self.samples.get(iz).ok_or_else(|| DixError::Domain(format!("patch has no sample {iz}")))
    }
}

fn zf<T: Real>(z: &[T]) -> Vec<f64> {
    z.iter().map(|c| to_f64(*c)).collect()
}

/// `dφ(z, t)` in the parallel frame: columns `J_k(t)` for the sphere
/// coordinates, then the constant field `γ̇`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalJacobi<T: Real> {
    /// `n × n`: `[[J, 0], [0, 1]]`.
    pub differential: DMatrix<T>,
    /// `J(t)`, `(n−1) × (n−1)`.
    pub j: DMatrix<T>,
    /// `D_t J(t)`.
    pub dj: DMatrix<T>,
}

fn propagate_sample<T: Real>(sample: &PatchSample<T>, t: T) -> Result<JacobiPair<T>> {
    let curve = &sample.curvature;
    if t > T::zero() || !curve.contains(t) || !curve.contains(T::zero()) {
        return Err(DixError::Domain(format!(
            "t = {t} outside the horizon [{}, 0] of the normal geodesic at z = {:?}",
            curve.start,
            zf(&sample.z)
        )));
    }
    let start = JacobiPair { j: sample.basis.clone(), y: &sample.shape * &sample.basis };
    Ok(propagate_jacobi(curve, T::zero(), t, steps_for(t, curve.step), &start))
}

/// Jacobi fields `J(0) = ∂α/∂z_k`, `D_t J(0) = S J(0)` at time `t ≤ 0`.
pub fn surface_normal_jacobi<T: Real>(patch: &SurfacePatch<T>, iz: usize, t: T) -> Result<NormalJacobi<T>> {
    let sample = patch.sample_at(iz)?;
    let pair = propagate_sample(sample, t)?;
    let m = pair.j.nrows();
    let mut differential = DMatrix::zeros(m + 1, m + 1);
    differential.view_mut((0, 0), (m, m)).copy_from(&pair.j);
    differential[(m, m)] = T::one();
    Ok(NormalJacobi { differential, j: pair.j, dj: pair.y })
}

fn focal<T: Real>(j: &DMatrix<T>, scale: T) -> bool {
    sigma_min(j) <= lit::<T>(FOCAL_THRESHOLD) * scale
}

/// Focal times `t < 0` along the normal geodesic at sample `iz`, over the
/// whole horizon of the sample.
pub fn focal_times<T: Real>(patch: &SurfacePatch<T>, iz: usize) -> Result<Vec<T>> {
    let sample = patch.sample_at(iz)?;
    let curve = &sample.curvature;
    let h = curve.step;
    let count = to_f64((-curve.start / h).round()) as usize;
    // J on the grid t_k = −k h
    let mut nodes = Vec::with_capacity(count + 1);
    let mut pair = JacobiPair { j: sample.basis.clone(), y: &sample.shape * &sample.basis };
    nodes.push(pair.clone());
    for k in 0..count {
        let from = -h * lit::<T>(k as f64);
        pair = propagate_jacobi(curve, from, from - h, 4, &pair);
        nodes.push(pair.clone());
    }
    let at = |t: T| {
        let k = to_f64((-t / h).round()).clamp(0.0, count as f64) as usize;
        propagate_jacobi(curve, -h * lit::<T>(k as f64), t, 4, &nodes[k])
    };
    let smin: Vec<T> = nodes.iter().map(|p| sigma_min(&p.j)).collect();
    let mut out = Vec::new();
    for k in 1..count {
        if !(smin[k] <= smin[k - 1] && smin[k] < smin[k + 1]) {
            continue;
        }
        let (hi, lo) = (-h * lit::<T>((k - 1) as f64), -h * lit::<T>((k + 1) as f64));
        let det = |t: T| at(t).j.determinant();
        let mid = -h * lit::<T>(k as f64);
        let neg = |t: T| det(t) < T::zero();
        let t_star = if neg(lo) != neg(mid) {
            bisect(lo, mid, h * lit(1e-12), det)
        } else if neg(mid) != neg(hi) {
            bisect(mid, hi, h * lit(1e-12), det)
        } else {
            golden_min(lo, hi, h * lit(1e-10), |t| sigma_min(&at(t).j))
        };
        let p = at(t_star);
        if focal(&p.j, sigma_max(&p.y).max(T::one()) * h) || sigma_min(&p.j) <= lit::<T>(1e-6) * sigma_max(&p.y) {
            out.push(t_star);
        }
    }
    Ok(out)
}

/// Metric in surface normal coordinates at `(z, t)`: `g_jk = J_jᵀ J_k` on the
/// sphere block, `g_nn = 1`, `g_nk = 0`.
pub fn assemble_metric<T: Real>(patch: &SurfacePatch<T>, iz: usize, t: T) -> Result<DMatrix<T>> {
    let nj = surface_normal_jacobi(patch, iz, t)?;
    if focal(&nj.j, sigma_max(&nj.j).max(T::one())) {
        return Err(DixError::DegenerateMetric { z: zf(&patch.samples[iz].z), t: to_f64(t) });
    }
    let m = nj.j.nrows();
    let block = nj.j.transpose() * &nj.j;
    let mut g = DMatrix::zeros(m + 1, m + 1);
    g.view_mut((0, 0), (m, m)).copy_from(&((&block + block.transpose()) * lit::<T>(0.5)));
    g[(m, m)] = T::one();
    Ok(g)
}

/// The assembled metric over `Ω × t_grid` with the focal sets.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalCoordinateMetric<T: Real> {
    pub z: Vec<Vec<T>>,
    pub t_grid: Vec<T>,
    /// `g[iz][it]`, `None` at focal points.
    pub g: Vec<Vec<Option<DMatrix<T>>>>,
    pub focal_sets: Vec<Vec<T>>,
}

/// Assembles the metric at every sample and time of `t_grid` (all `≤ 0`).
pub fn normal_coordinate_metric<T: Real>(patch: &SurfacePatch<T>, t_grid: &[T]) -> Result<NormalCoordinateMetric<T>> {
    let columns = (0..patch.samples.len())
        .into_par_iter()
        .map(|iz| {
            let g = t_grid
                .iter()
                .map(|&t| match assemble_metric(patch, iz, t) {
                    Ok(g) => Ok(Some(g)),
                    Err(DixError::DegenerateMetric { .. }) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((g, focal_times(patch, iz)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (g, focal_sets) = columns.into_iter().unzip();
    Ok(NormalCoordinateMetric {
        z: patch.samples.iter().map(|s| s.z.clone()).collect(),
        t_grid: t_grid.to_vec(),
        g,
        focal_sets,
    })
}
