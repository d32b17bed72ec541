//! Unit-speed geodesics with a parallel `g_γ̇`-orthonormal frame.
//!
//! The frame `f_1, …, f_{n-1}, f_n = γ̇` is transported by
//! `ḟ^i = −N^i_j(x, γ̇) f^j`, which is the covariant derivative along the
//! geodesic with reference vector `γ̇`. Operators on the normal space become
//! plain `(n−1)×(n−1)` matrices in this frame.

mod dopri;
mod io;

use nalgebra::{DMatrix, DVector};

use crate::catalog::{fundamental_tensor, geodesic_spray, inner, normalize, FinslerChart};
use crate::error::{DixError, Result};
use crate::numerics::fornberg_weights;
use crate::scalar::{abs, lit, to_f64, Real};

pub use io::{read_frame_csv, write_frame_csv};

/// Error control of the geodesic integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicOptions {
    pub atol: f64,
    pub rtol: f64,
    pub initial_step: f64,
    pub max_steps: usize,
    /// Re-orthonormalize the frame (and rescale `γ̇` to unit speed) after
    /// every accepted step.
    pub reorthonormalize: bool,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { atol: 1e-10, rtol: 1e-10, initial_step: 1e-2, max_steps: 1_000_000, reorthonormalize: true }
    }
}

/// Geodesic samples on a uniform time grid together with the parallel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicFrame<T: Real> {
    pub chart_id: String,
    pub dim: usize,
    pub times: Vec<T>,
    pub positions: Vec<DVector<T>>,
    pub velocities: Vec<DVector<T>>,
    /// Column `k < n−1` is `f_{k+1}`, the last column is `γ̇`.
    pub frames: Vec<DMatrix<T>>,
    /// Time at which the backward integration left the chart, if it did.
    pub backward_exit: Option<T>,
    /// Time at which the forward integration left the chart, if it did.
    pub forward_exit: Option<T>,
}

impl<T: Real> GeodesicFrame<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn truncated(&self) -> bool {
        self.backward_exit.is_some() || self.forward_exit.is_some()
    }

    /// Sample spacing (the grid is uniform).
    pub fn step(&self) -> T {
        self.times[1] - self.times[0]
    }

    /// Index of the sample at time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: T) -> Option<usize> {
        if self.times.is_empty() {
            return None;
        }
        let k = ((t - self.times[0]) / self.step()).round();
        let i = to_f64(k);
        if i < 0.0 || i as usize >= self.times.len() {
            return None;
        }
        let i = i as usize;
        (abs(self.times[i] - t) <= self.step() * lit(1e-6)).then_some(i)
    }

    /// Normal frame vectors `f_1, …, f_{n−1}` at sample `i` as columns.
    pub fn normal_frame(&self, i: usize) -> DMatrix<T> {
        self.frames[i].columns(0, self.dim - 1).into_owned()
    }

    pub fn covers(&self, lo: T, hi: T) -> bool {
        !self.is_empty() && self.times[0] <= lo + self.step() * lit(1e-6) && *self.times.last().unwrap() >= hi - self.step() * lit(1e-6)
    }
}

/// Field along a geodesic given by its components in the parallel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField<T: Real> {
    pub times: Vec<T>,
    pub values: Vec<DMatrix<T>>,
}

/// Uniform grid `k·dt` inside `[lo, hi]`.
pub fn uniform_grid<T: Real>(lo: T, hi: T, dt: T) -> Vec<T> {
    let slack = lit::<T>(1e-9);
    let k_lo = to_f64((lo / dt - slack).ceil()) as i64;
    let k_hi = to_f64((hi / dt + slack).floor()) as i64;
    (k_lo..=k_hi).map(|k| dt * lit::<T>(k as f64)).collect()
}

/// Makes `frame` `g`-orthonormal, keeping the last column `velocity` in
/// place and removing it from the others (modified Gram–Schmidt).
fn orthonormalize<T: Real>(g: &DMatrix<T>, velocity: &DVector<T>, normal: &mut [DVector<T>]) {
    let vv = inner(g, velocity, velocity);
    for a in 0..normal.len() {
        let mut f = normal[a].clone();
        let c = inner(g, &f, velocity) / vv;
        f.axpy(-c, velocity, T::one());
        for b in normal.iter().take(a) {
            let c = inner(g, &f, b);
            f.axpy(-c, b, T::one());
        }
        let norm = inner(g, &f, &f).sqrt();
        normal[a] = f / norm;
    }
}

/// `g_v`-orthonormal basis of the normal space of `v`, obtained from the
/// coordinate basis.
pub fn initial_normal_frame<T: Real>(g: &DMatrix<T>, v: &DVector<T>) -> Vec<DVector<T>> {
    let n = v.len();
    let vv = inner(g, v, v);
    let mut out: Vec<DVector<T>> = Vec::with_capacity(n - 1);
    // prefer the coordinate directions least aligned with v
    let mut order: Vec<usize> = (0..n).collect();
    let gv = g * v;
    order.sort_by(|&a, &b| {
        let ca = abs(gv[a]) / g[(a, a)].sqrt();
        let cb = abs(gv[b]) / g[(b, b)].sqrt();
        ca.partial_cmp(&cb).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in &order {
        if out.len() == n - 1 {
            break;
        }
        let mut f = DVector::zeros(n);
        f[i] = T::one();
        let c = inner(g, &f, v) / vv;
        f.axpy(-c, v, T::one());
        for b in &out {
            let c = inner(g, &f, b);
            f.axpy(-c, b, T::one());
        }
        let norm = inner(g, &f, &f).sqrt();
        if norm > lit(1e-6) {
            out.push(f / norm);
        }
    }
    out
}

struct Layout {
    n: usize,
}

impl Layout {
    fn size(&self) -> usize {
        self.n * (self.n + 1)
    }
    fn pack<T: Real>(&self, x: &DVector<T>, v: &DVector<T>, normal: &[DVector<T>]) -> DVector<T> {
        let mut y = DVector::zeros(self.size());
        y.rows_mut(0, self.n).copy_from(x);
        y.rows_mut(self.n, self.n).copy_from(v);
        for (a, f) in normal.iter().enumerate() {
            y.rows_mut((2 + a) * self.n, self.n).copy_from(f);
        }
        y
    }
    fn x<T: Real>(&self, y: &DVector<T>) -> DVector<T> {
        y.rows(0, self.n).into_owned()
    }
    fn v<T: Real>(&self, y: &DVector<T>) -> DVector<T> {
        y.rows(self.n, self.n).into_owned()
    }
    fn normal<T: Real>(&self, y: &DVector<T>) -> Vec<DVector<T>> {
        (0..self.n - 1).map(|a| y.rows((2 + a) * self.n, self.n).into_owned()).collect()
    }
}

struct Sample<T: Real> {
    t: T,
    y: DVector<T>,
}

enum Outcome<T> {
    Complete,
    Exit(T),
}

fn is_domain(e: &DixError) -> bool {
    matches!(e, DixError::Domain(_))
}

/// Integrates from `0` toward `end` and emits the grid `targets`, which are
/// ordered away from `0`.
fn sweep<T: Real>(
    chart: &dyn FinslerChart<T>,
    layout: &Layout,
    y0: &DVector<T>,
    end: T,
    targets: &[T],
    opts: &GeodesicOptions,
    out: &mut Vec<Sample<T>>,
) -> Result<Outcome<T>> {
    let n = layout.n;
    let rhs = |_t: T, y: &DVector<T>| -> Result<DVector<T>> {
        let x = layout.x(y);
        let v = layout.v(y);
        let spray = geodesic_spray(chart, &x, &v)?;
        let mut dy = DVector::zeros(y.len());
        dy.rows_mut(0, n).copy_from(&v);
        dy.rows_mut(n, n).copy_from(&(spray.g * lit::<T>(-2.0)));
        for a in 0..n - 1 {
            let f = y.rows((2 + a) * n, n);
            dy.rows_mut((2 + a) * n, n).copy_from(&(-(&spray.n * f)));
        }
        Ok(dy)
    };
    let dir = if end < T::zero() { -T::one() } else { T::one() };
    let (atol, rtol) = (lit::<T>(opts.atol), lit::<T>(opts.rtol));
    let mut t = T::zero();
    let mut y = y0.clone();
    let mut h = lit::<T>(opts.initial_step) * dir;
    let mut next = 0usize;
    while next < targets.len() && abs(targets[next]) <= lit(1e-14) {
        out.push(Sample { t: targets[next], y: y.clone() });
        next += 1;
    }
    let min_step = lit::<T>(1e-12) * abs(end).max(T::one());
    let mut steps = 0usize;
    while dir * (end - t) > lit(1e-14) {
        steps += 1;
        if steps > opts.max_steps {
            return Err(DixError::Integration { t: to_f64(t), message: "step budget exhausted".into() });
        }
        if abs(h) > abs(end - t) {
            h = end - t;
        }
        let trial = match dopri::attempt(&rhs, t, &y, h, atol, rtol) {
            Ok(trial) => trial,
            Err(e) if is_domain(&e) => {
                h *= lit(0.25);
                if abs(h) < min_step {
                    return Ok(Outcome::Exit(t));
                }
                continue;
            }
            Err(e) => {
                return Err(DixError::Integration { t: to_f64(t), message: e.to_string() });
            }
        };
        if !trial.err.is_finite() {
            h *= lit(0.25);
            if abs(h) < min_step {
                return Err(DixError::Integration { t: to_f64(t), message: "non-finite error estimate".into() });
            }
            continue;
        }
        if trial.err > T::one() {
            h *= dopri::step_factor(trial.err).min(T::one());
            if abs(h) < min_step {
                return Err(DixError::Integration { t: to_f64(t), message: "step size underflow".into() });
            }
            continue;
        }
        let t1 = t + h;
        while next < targets.len() && dir * (targets[next] - t1) <= lit(1e-14) {
            let theta = (targets[next] - t) / h;
            out.push(Sample { t: targets[next], y: trial.interpolate(theta) });
            next += 1;
        }
        t = t1;
        y = trial.y1;
        if opts.reorthonormalize {
            // project back onto the unit sphere bundle as well
            let x = layout.x(&y);
            let v = normalize(chart, &x, &layout.v(&y));
            let g = fundamental_tensor(chart, &x, &v)
                .map_err(|e| DixError::Integration { t: to_f64(t), message: e.to_string() })?;
            let mut normal = layout.normal(&y);
            orthonormalize(&g, &v, &mut normal);
            y = layout.pack(&x, &v, &normal);
        }
        h *= dopri::step_factor(trial.err);
    }
    Ok(Outcome::Complete)
}

/// Integrates the unit-speed geodesic through `x0` with velocity `v0` over
/// `t_span = (lo, hi)`, `lo ≤ 0 ≤ hi`, sampling every `dt`.
///
/// Time runs backward for `t < 0`; the curve is never reversed, so the
/// result is correct for non-reversible norms. Leaving the chart truncates
/// the samples and records the exit time.
pub fn integrate_geodesic<T: Real>(
    chart: &dyn FinslerChart<T>,
    x0: &DVector<T>,
    v0: &DVector<T>,
    t_span: (T, T),
    dt: T,
    opts: &GeodesicOptions,
) -> Result<GeodesicFrame<T>> {
    let n = chart.dim();
    let (lo, hi) = t_span;
    if lo > T::zero() || hi < T::zero() || dt <= T::zero() {
        return Err(DixError::Config("time span must contain 0 and the sample step must be positive".into()));
    }
    if n < 2 {
        return Err(DixError::Dimension("geodesic frames need dimension at least 2".into()));
    }
    let g0 = fundamental_tensor(chart, x0, v0)?;
    let speed = chart.finsler(x0, v0);
    if abs(speed - T::one()) > lit(1e-10) {
        return Err(DixError::Domain(format!("initial velocity has F = {speed}, expected 1")));
    }
    let layout = Layout { n };
    let normal = initial_normal_frame(&g0, v0);
    let y0 = layout.pack(x0, v0, &normal);
    let grid = uniform_grid(lo, hi, dt);
    let backward: Vec<T> = grid.iter().rev().copied().filter(|t| *t <= T::zero()).collect();
    let forward: Vec<T> = grid.iter().copied().filter(|t| *t > T::zero()).collect();

    let mut back_samples = Vec::new();
    let backward_exit = match sweep(chart, &layout, &y0, lo, &backward, opts, &mut back_samples)? {
        Outcome::Complete => None,
        Outcome::Exit(t) => Some(t),
    };
    let mut fwd_samples = Vec::new();
    let forward_exit = match sweep(chart, &layout, &y0, hi, &forward, opts, &mut fwd_samples)? {
        Outcome::Complete => None,
        Outcome::Exit(t) => Some(t),
    };
    back_samples.reverse();
    back_samples.extend(fwd_samples);

    let mut frame = GeodesicFrame {
        chart_id: chart.id().to_string(),
        dim: n,
        times: Vec::with_capacity(back_samples.len()),
        positions: Vec::with_capacity(back_samples.len()),
        velocities: Vec::with_capacity(back_samples.len()),
        frames: Vec::with_capacity(back_samples.len()),
        backward_exit,
        forward_exit,
    };
    for Sample { t, y } in back_samples {
        let x = layout.x(&y);
        let mut v = layout.v(&y);
        let mut normal = layout.normal(&y);
        if opts.reorthonormalize {
            v = normalize(chart, &x, &v);
            let g = fundamental_tensor(chart, &x, &v)?;
            orthonormalize(&g, &v, &mut normal);
        }
        let mut m = DMatrix::zeros(n, n);
        for (a, f) in normal.iter().enumerate() {
            m.set_column(a, f);
        }
        m.set_column(n - 1, &v);
        frame.times.push(t);
        frame.positions.push(x);
        frame.velocities.push(v);
        frame.frames.push(m);
    }
    Ok(frame)
}

/// `D_t` of a field given in the parallel frame: componentwise
/// differentiation by five-point finite differences on the sample grid.
pub fn covariant_derivative<T: Real>(frame: &GeodesicFrame<T>, field: &FrameField<T>) -> Result<FrameField<T>> {
    let m = field.times.len();
    if m < 5 || field.values.len() != m {
        return Err(DixError::Domain(format!("covariant derivative needs at least 5 samples, got {m}")));
    }
    let on_grid = field.times.iter().all(|t| frame.index_of(*t).is_some());
    if !on_grid {
        return Err(DixError::Domain("field is not sampled on the frame's time grid".into()));
    }
    let values = (0..m)
        .map(|i| {
            let start = i.saturating_sub(2).min(m - 5);
            let nodes = &field.times[start..start + 5];
            let w = fornberg_weights(field.times[i], nodes, 1);
            let mut d = DMatrix::zeros(field.values[i].nrows(), field.values[i].ncols());
            for (k, wk) in w[1].iter().enumerate() {
                d += &field.values[start + k] * *wk;
            }
            d
        })
        .collect();
    Ok(FrameField { times: field.times.clone(), values })
}
