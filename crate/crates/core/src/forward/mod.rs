//! Jacobi matrices, shape operators of geodesic spheres and the sampled
//! shape-operator grid along a geodesic.
//!
//! For a base time `t`, `j(r, t)` collects the normal Jacobi fields vanishing
//! at `t` (with `∂_r j(t, t) = I`) in the parallel frame, `y = ∂_r j`, and the
//! shape operator of the geodesic sphere centred at `γ(t)` is
//! `s(r, t) = y j⁻¹` wherever `j` is invertible.

mod grid;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::catalog::{curvature_operator_full, fundamental_tensor, FinslerChart};
use crate::error::{DixError, Result};
use crate::geodesic::GeodesicFrame;
use crate::numerics::{sigma_max, UniformSeries};
use crate::scalar::{abs, lit, to_f64, Real};

pub use grid::{
    read_curve_csv, read_grid_csv, riccati_residual, synthesize_from_curve, synthesize_sphere_data, write_curve_csv,
    write_grid_csv, RICCATI_STENCIL,
    ForwardData, SphereDataGrid,
};

/// Curvature matrix `rmat(t)_{ab} = g_γ̇(f_a, R_γ̇ f_b)` sampled along a geodesic.
pub type CurvatureCurve<T> = UniformSeries<T>;

/// Relative determinant threshold below which `j` counts as singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e-8;

/// Curvature operator in the parallel frame, including the `γ̇` row and
/// column (which vanish up to discretization error).
pub fn frame_curvature_full<T: Real>(
    chart: &dyn FinslerChart<T>,
    frame: &GeodesicFrame<T>,
    i: usize,
) -> Result<(DMatrix<T>, Option<String>)> {
    let (x, v) = (&frame.positions[i], &frame.velocities[i]);
    let g = fundamental_tensor(chart, x, v)?;
    let r = curvature_operator_full(chart, x, v)?;
    let f = &frame.frames[i];
    Ok((f.transpose() * g * r.r_full * f, r.warning))
}

/// The curvature matrix on the normal frame at every frame sample, plus any
/// numerical-differentiation warnings.
pub fn frame_curvature<T: Real>(
    chart: &dyn FinslerChart<T>,
    frame: &GeodesicFrame<T>,
) -> Result<(CurvatureCurve<T>, Vec<String>)> {
    if frame.len() < 2 {
        return Err(DixError::Domain("geodesic frame has fewer than two samples".into()));
    }
    let m = frame.dim - 1;
    let evaluated = (0..frame.len())
        .into_par_iter()
        .map(|i| frame_curvature_full(chart, frame, i).map(|(r, w)| (r.view((0, 0), (m, m)).into_owned(), w)))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings: Vec<String> = evaluated.iter().filter_map(|(_, w)| w.clone()).collect();
    warnings.dedup();
    let values = evaluated.into_iter().map(|(r, _)| r).collect();
    Ok((UniformSeries::new(frame.times[0], frame.step(), values), warnings))
}

/// Jacobi matrix `j` and its derivative `y` at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobiPair<T: Real> {
    pub j: DMatrix<T>,
    pub y: DMatrix<T>,
}

fn rk4_step<T: Real>(curve: &CurvatureCurve<T>, r: T, h: T, p: &JacobiPair<T>) -> JacobiPair<T> {
    let half: T = lit(0.5);
    let r_mid = curve.at(r + h * half);
    let r_end = curve.at(r + h);
    let r0 = curve.at(r);
    let k1j = p.y.clone();
    let k1y = -(&r0 * &p.j);
    let j2 = &p.j + &k1j * (h * half);
    let y2 = &p.y + &k1y * (h * half);
    let k2j = y2.clone();
    let k2y = -(&r_mid * &j2);
    let j3 = &p.j + &k2j * (h * half);
    let y3 = &p.y + &k2y * (h * half);
    let k3j = y3.clone();
    let k3y = -(&r_mid * &j3);
    let j4 = &p.j + &k3j * h;
    let y4 = &p.y + &k3y * h;
    let k4j = y4.clone();
    let k4y = -(&r_end * &j4);
    let sixth = h / lit(6.0);
    let two: T = lit(2.0);
    JacobiPair {
        j: &p.j + (k1j + k2j * two + k3j * two + k4j) * sixth,
        y: &p.y + (k1y + k2y * two + k3y * two + k4y) * sixth,
    }
}

/// Integrates `j'' = −rmat j` from `from` to `to` with `steps` equal RK4 steps.
pub fn propagate_jacobi<T: Real>(
    curve: &CurvatureCurve<T>,
    from: T,
    to: T,
    steps: usize,
    start: &JacobiPair<T>,
) -> JacobiPair<T> {
    let steps = steps.max(1);
    let h = (to - from) / lit::<T>(steps as f64);
    let mut p = start.clone();
    for k in 0..steps {
        p = rk4_step(curve, from + h * lit::<T>(k as f64), h, &p);
    }
    p
}

/// Number of RK4 steps used over an interval of length `len` on a curve with
/// sample spacing `step`: four per sample interval.
pub(crate) fn steps_for<T: Real>(len: T, step: T) -> usize {
    (to_f64(abs(len) / step) * 4.0).ceil().max(1.0) as usize
}

fn check_covered<T: Real>(curve: &CurvatureCurve<T>, a: T, b: T) -> Result<()> {
    if !curve.contains(a) || !curve.contains(b) {
        return Err(DixError::Domain(format!(
            "curvature curve on [{}, {}] does not cover [{}, {}]",
            curve.start,
            curve.end(),
            a.min(b),
            a.max(b)
        )));
    }
    Ok(())
}

/// The slice `r ↦ (j(r, t), y(r, t))` at the given `r` values, obtained by
/// integrating from `j(t, t) = 0`, `y(t, t) = I`.
pub fn jacobi_matrix<T: Real>(curve: &CurvatureCurve<T>, t: T, r_values: &[T]) -> Result<Vec<JacobiPair<T>>> {
    let m = curve.values[0].nrows();
    for &r in r_values {
        check_covered(curve, t, r)?;
    }
    let start = JacobiPair { j: DMatrix::zeros(m, m), y: DMatrix::identity(m, m) };
    let mut out: Vec<Option<JacobiPair<T>>> = vec![None; r_values.len()];
    for upward in [true, false] {
        let mut idx: Vec<usize> = (0..r_values.len())
            .filter(|&i| if upward { r_values[i] >= t } else { r_values[i] < t })
            .collect();
        idx.sort_by(|&a, &b| {
            let (da, db) = (abs(r_values[a] - t), abs(r_values[b] - t));
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
        });
        let (mut pos, mut state) = (t, start.clone());
        for i in idx {
            let r = r_values[i];
            state = propagate_jacobi(curve, pos, r, steps_for(r - pos, curve.step), &state);
            pos = r;
            out[i] = Some(state.clone());
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every r visited")).collect())
}

/// `(j, y)` at a single `r`, integrated with `steps` RK4 steps from the
/// diagonal (used for the small-`|r − t|` asymptotics).
pub fn jacobi_at<T: Real>(curve: &CurvatureCurve<T>, t: T, r: T, steps: usize) -> Result<JacobiPair<T>> {
    check_covered(curve, t, r)?;
    let m = curve.values[0].nrows();
    let start = JacobiPair { j: DMatrix::zeros(m, m), y: DMatrix::identity(m, m) };
    Ok(propagate_jacobi(curve, t, r, steps, &start))
}

/// `true` when `|det j| < threshold · ‖j‖^(n−1)`.
pub fn is_singular<T: Real>(j: &DMatrix<T>) -> bool {
    let norm = sigma_max(j);
    if norm == T::zero() {
        return true;
    }
    abs(j.determinant()) < lit::<T>(SINGULARITY_THRESHOLD) * norm.powi(j.nrows() as i32)
}

/// Shape operator `s = y j⁻¹`, or `None` at a conjugate pair.
pub fn shape_matrix<T: Real>(pair: &JacobiPair<T>) -> Option<DMatrix<T>> {
    if is_singular(&pair.j) {
        return None;
    }
    let jt = pair.j.transpose();
    // s = y j⁻¹  ⇔  jᵀ sᵀ = yᵀ
    jt.lu().solve(&pair.y.transpose()).map(|st| st.transpose())
}

/// Inverse shape operator `k = j y⁻¹`, or `None` where `y` is singular.
pub fn inverse_shape_matrix<T: Real>(pair: &JacobiPair<T>) -> Option<DMatrix<T>> {
    if is_singular(&pair.y) {
        return None;
    }
    pair.y.transpose().lu().solve(&pair.j.transpose()).map(|kt| kt.transpose())
}

/// Solution operator of the Jacobi equation: the `2(n−1)`-square matrix
/// mapping `(J(from), J'(from))` to `(J(to), J'(to))`.
pub fn jacobi_solution_operator<T: Real>(curve: &CurvatureCurve<T>, from: T, to: T) -> Result<DMatrix<T>> {
    check_covered(curve, from, to)?;
    let m = curve.values[0].nrows();
    let mut u = DMatrix::zeros(2 * m, 2 * m);
    // the J-part of the first m columns starts at I, the J'-part of the last m at I
    for (col, (j, y)) in [
        (0, (DMatrix::identity(m, m), DMatrix::zeros(m, m))),
        (m, (DMatrix::zeros(m, m), DMatrix::identity(m, m))),
    ] {
        let p = propagate_jacobi(curve, from, to, steps_for(to - from, curve.step), &JacobiPair { j, y });
        u.view_mut((0, col), (m, m)).copy_from(&p.j);
        u.view_mut((m, col), (m, m)).copy_from(&p.y);
    }
    Ok(u)
}

/// Log-log fit of the remainder `‖k(r, t) − (r−t) I − ((r−t)³/3) rmat(r)‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorFit {
    pub offsets: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Least-squares slope over the points above the rounding floor.
    pub slope: Option<f64>,
    /// Fitted constant `C` in `remainder ≈ C |r − t|^slope`.
    pub constant: Option<f64>,
    /// The remainder never rises above rounding level (flat charts).
    pub at_rounding_floor: bool,
}

impl TaylorFit {
    pub fn passes(&self, min_slope: f64) -> bool {
        self.at_rounding_floor || self.slope.is_some_and(|s| s >= min_slope)
    }
}

/// Fits the small-distance behaviour of `k(·, t)` for `r − t` in
/// `[lo, hi]` (geometrically spaced, `count` points).
pub fn k_taylor_fit<T: Real>(curve: &CurvatureCurve<T>, t: T, lo: f64, hi: f64, count: usize) -> Result<TaylorFit> {
    let mut offsets = Vec::with_capacity(count);
    let mut remainders = Vec::with_capacity(count);
    for i in 0..count {
        let tau = lo * (hi / lo).powf(i as f64 / (count - 1).max(1) as f64);
        let tau_t: T = lit(tau);
        let r = t + tau_t;
        let pair = jacobi_at(curve, t, r, 64)?;
        let k = inverse_shape_matrix(&pair)
            .ok_or_else(|| DixError::Domain("y singular near the diagonal".into()))?;
        let m = k.nrows();
        let model = DMatrix::<T>::identity(m, m) * tau_t + curve.at(r) * (tau_t * tau_t * tau_t / lit(3.0));
        offsets.push(tau);
        remainders.push(to_f64((k - model).norm()));
    }
    // rounding level of k ≈ |r − t|, times a generous factor
    let floor = |tau: f64| 1e3 * f64::EPSILON * tau;
    let usable: Vec<(f64, f64)> = offsets
        .iter()
        .zip(&remainders)
        .filter(|(tau, rem)| **rem > floor(**tau))
        .map(|(tau, rem)| (tau.ln(), rem.ln()))
        .collect();
    let at_rounding_floor = usable.is_empty();
    let (slope, constant) = if usable.len() >= 3 {
        let nf = usable.len() as f64;
        let mx = usable.iter().map(|p| p.0).sum::<f64>() / nf;
        let my = usable.iter().map(|p| p.1).sum::<f64>() / nf;
        let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        (Some(slope), Some((my - slope * mx).exp()))
    } else {
        (None, None)
    };
    Ok(TaylorFit { offsets, remainders, slope, constant, at_rounding_floor })
}
