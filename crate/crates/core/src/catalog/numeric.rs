use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::fd::{d1, d2, Richardson};
use super::{BoxDomain, ChartKind, CurvatureOutput, FinslerChart, Polynomial, SprayOutput};
use crate::error::{DixError, Result};
use crate::scalar::{eps, lit, Real};

type FinslerFn<T> = dyn Fn(&DVector<T>, &DVector<T>) -> T + Send + Sync;

/// Relative finite-difference steps of a [`NumericChart`].
///
/// Position steps scale with `max(1, |x|)`, velocity steps with `|v|`. The
/// inner level differentiates `F²` to obtain `g` and `G`; the outer level
/// differentiates `G` to obtain `N` and the curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericSteps {
    pub inner: f64,
    pub inner_levels: usize,
    pub outer: f64,
    pub outer_levels: usize,
}

impl Default for NumericSteps {
    fn default() -> Self {
        Self { inner: 2e-2, inner_levels: 3, outer: 5e-2, outer_levels: 3 }
    }
}

/// Chart whose geometry is obtained by differentiating `F` numerically.
#[derive(Clone)]
pub struct NumericChart<T: Real> {
    id: String,
    dim: usize,
    domain: BoxDomain<T>,
    reversible: bool,
    riemannian: bool,
    f: Arc<FinslerFn<T>>,
    steps: NumericSteps,
}

impl<T: Real> fmt::Debug for NumericChart<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NumericChart")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("steps", &self.steps)
            .finish_non_exhaustive()
    }
}

impl<T: Real> NumericChart<T> {
    pub fn new<F>(id: impl Into<String>, dim: usize, domain: BoxDomain<T>, f: F) -> Self
    where
        F: Fn(&DVector<T>, &DVector<T>) -> T + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            dim,
            domain,
            reversible: false,
            riemannian: false,
            f: Arc::new(f),
            steps: NumericSteps::default(),
        }
    }

    pub fn with_flags(mut self, reversible: bool, riemannian: bool) -> Self {
        self.reversible = reversible;
        self.riemannian = riemannian;
        self
    }

    pub fn with_steps(mut self, steps: NumericSteps) -> Self {
        self.steps = steps;
        self
    }

    pub fn steps(&self) -> NumericSteps {
        self.steps
    }

    fn x_scale(x: &DVector<T>) -> T {
        x.norm().max(T::one())
    }

    fn inner_steps(&self, x: &DVector<T>, v: &DVector<T>) -> (Richardson<T>, Richardson<T>) {
        let h: T = lit(self.steps.inner);
        let levels = self.steps.inner_levels;
        (
            Richardson { start: h * Self::x_scale(x), levels },
            Richardson { start: h * v.norm(), levels },
        )
    }

    fn outer_steps(&self, x: &DVector<T>, v: &DVector<T>) -> (Richardson<T>, Richardson<T>) {
        let h: T = lit(self.steps.outer);
        let levels = self.steps.outer_levels;
        (
            Richardson { start: h * Self::x_scale(x), levels },
            Richardson { start: h * v.norm(), levels },
        )
    }

    fn join(x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(x.len() + v.len(), x.iter().chain(v.iter()).copied())
    }

    fn split(&self, z: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let n = self.dim;
        (z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
    }

    /// `F²` as a one-component vector function of `z = (x, v)`.
    fn energy(&self, z: &DVector<T>) -> DVector<T> {
        let (x, v) = self.split(z);
        let f = (self.f)(&x, &v);
        DVector::from_element(1, f * f)
    }

    /// Fundamental tensor `g`, mixed Hessian `∂²F²/∂v^l∂x^k` and `∂F²/∂x`.
    fn second_jet(&self, x: &DVector<T>, v: &DVector<T>) -> (DMatrix<T>, DMatrix<T>, DVector<T>) {
        let n = self.dim;
        let z = Self::join(x, v);
        let (rx, rv) = self.inner_steps(x, v);
        let energy = |w: &DVector<T>| self.energy(w);
        let center = energy(&z);
        let half: T = lit(0.5);
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let e = d2(&energy, &z, &center, n + i, n + j, rv, rv)[0] * half;
                g[(i, j)] = e;
                g[(j, i)] = e;
            }
        }
        let mut m = DMatrix::zeros(n, n);
        for l in 0..n {
            for k in 0..n {
                m[(l, k)] = d2(&energy, &z, &center, n + l, k, rv, rx)[0];
            }
        }
        let dl = DVector::from_fn(n, |k, _| d1(&energy, &z, k, rx)[0]);
        (g, m, dl)
    }

    fn coefficients(&self, x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let (g, m, dl) = self.second_jet(x, v);
        let rhs = (m * v - dl) * lit::<T>(0.25);
        match g.lu().solve(&rhs) {
            Some(sol) => sol,
            None => DVector::from_element(self.dim, lit(f64::NAN)),
        }
    }

    fn coefficients_z(&self, z: &DVector<T>) -> DVector<T> {
        let (x, v) = self.split(z);
        self.coefficients(&x, &v)
    }

    fn step_warning(&self, v: &DVector<T>) -> Option<String> {
        let smallest = lit::<T>(self.steps.inner) * v.norm().min(T::one())
            / lit::<T>(2f64.powi(self.steps.inner_levels.saturating_sub(1) as i32));
        let floor = eps::<T>().powf(lit(0.25));
        (smallest < floor).then(|| {
            format!(
                "finite-difference step {smallest} is below the accuracy floor {floor} of the working precision"
            )
        })
    }
}

impl<T: Real> FinslerChart<T> for NumericChart<T> {
    fn id(&self) -> &str {
        &self.id
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> ChartKind {
        ChartKind::Numeric
    }
    fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }
    fn reversible(&self) -> bool {
        self.reversible
    }
    fn riemannian(&self) -> bool {
        self.riemannian
    }
    fn finsler(&self, x: &DVector<T>, v: &DVector<T>) -> T {
        (self.f)(x, v)
    }
    fn metric_raw(&self, x: &DVector<T>, v: &DVector<T>) -> DMatrix<T> {
        self.second_jet(x, v).0
    }
    fn spray_raw(&self, x: &DVector<T>, v: &DVector<T>) -> SprayOutput<T> {
        let n = self.dim;
        let z = Self::join(x, v);
        let (_, rv) = self.outer_steps(x, v);
        let coeff = |w: &DVector<T>| self.coefficients_z(w);
        let g = coeff(&z);
        let mut conn = DMatrix::zeros(n, n);
        for j in 0..n {
            conn.set_column(j, &d1(&coeff, &z, n + j, rv));
        }
        SprayOutput { g, n: conn }
    }
    fn curvature_raw(&self, x: &DVector<T>, v: &DVector<T>) -> CurvatureOutput<T> {
        // R^i_k = 2 ∂_{x^k}G^i − v^j ∂²G^i/∂x^j∂v^k + 2 G^j ∂²G^i/∂v^j∂v^k − N^i_j N^j_k
        let n = self.dim;
        let z = Self::join(x, v);
        let (rx, rv) = self.outer_steps(x, v);
        let coeff = |w: &DVector<T>| self.coefficients_z(w);
        let g = coeff(&z);
        let two: T = lit(2.0);
        let mut conn = DMatrix::zeros(n, n);
        let mut r = DMatrix::zeros(n, n);
        let mut vv: Vec<Vec<DVector<T>>> = vec![Vec::with_capacity(n); n];
        for j in 0..n {
            for k in 0..n {
                let h = if k < j { vv[k][j].clone() } else { d2(&coeff, &z, &g, n + j, n + k, rv, rv) };
                vv[j].push(h);
            }
        }
        for k in 0..n {
            conn.set_column(k, &d1(&coeff, &z, n + k, rv));
            let dx = d1(&coeff, &z, k, rx);
            let mut col = dx * two;
            for j in 0..n {
                col -= d2(&coeff, &z, &g, j, n + k, rx, rv) * v[j];
            }
            for j in 0..n {
                col += &vv[j][k] * (two * g[j]);
            }
            r.set_column(k, &col);
        }
        r -= &conn * &conn;
        CurvatureOutput { r_full: r, warning: self.step_warning(v) }
    }
}

/// Parameters of the perturbed Randers family
/// `F(x, v) = |v| (1 + ε w(x)) + b(x) · v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedRanders<T: Real> {
    pub dim: usize,
    pub epsilon: T,
    pub w: Polynomial<T>,
    pub b: Vec<Polynomial<T>>,
    pub half_width: T,
}

impl<T: Real> PerturbedRanders<T> {
    /// The catalog defaults for `dim` 2 or 3.
    pub fn standard(dim: usize) -> Result<Self> {
        let c = |v: &[f64]| Polynomial::new(dim, v.iter().map(|&c| lit(c)).collect());
        let (w, b) = match dim {
            2 => (
                c(&[0.0, 0.0, 0.0, 1.0, 0.0, 1.0])?,
                vec![c(&[0.1, 0.0, 0.05])?, c(&[0.0, -0.05])?],
            ),
            3 => (
                c(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0])?,
                vec![c(&[0.1, 0.0, 0.05])?, c(&[0.0, -0.05])?, c(&[0.0, 0.03])?],
            ),
            _ => {
                return Err(DixError::Config(format!(
                    "no default perturbed Randers field in dimension {dim}"
                )))
            }
        };
        Ok(Self { dim, epsilon: lit(0.05), w, b, half_width: lit(6.0) })
    }

    /// Checks `1 + ε w > |b|` at the corners and center of the box, a
    /// necessary condition for strong convexity.
    pub fn validate(&self) -> Result<()> {
        if self.b.len() != self.dim || self.w.dim() != self.dim {
            return Err(DixError::Dimension(format!(
                "perturbed Randers chart of dimension {} needs {} drift components",
                self.dim, self.dim
            )));
        }
        let corners = 1usize << self.dim;
        let mut probes: Vec<DVector<T>> = (0..corners)
            .map(|mask| {
                DVector::from_fn(self.dim, |i, _| {
                    let s = if mask >> i & 1 == 1 { T::one() } else { -T::one() };
                    s * self.half_width * lit(0.999)
                })
            })
            .collect();
        probes.push(DVector::zeros(self.dim));
        for x in probes {
            let a = T::one() + self.epsilon * self.w.eval(&x);
            let b = DVector::from_fn(self.dim, |i, _| self.b[i].eval(&x)).norm();
            if a <= T::zero() || b >= a {
                return Err(DixError::Config(format!(
                    "perturbed Randers data is not a Finsler norm near {:?}",
                    x.iter().map(|c| crate::scalar::to_f64(*c)).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    pub fn into_chart(self) -> Result<NumericChart<T>> {
        self.validate()?;
        let id = format!("randers-perturbed-{}", self.dim);
        let domain = BoxDomain::cube(self.dim, self.half_width);
        let dim = self.dim;
        let Self { epsilon, w, b, .. } = self;
        Ok(NumericChart::new(id, dim, domain, move |x, v| {
            let drift: T = b.iter().zip(v.iter()).map(|(p, &vi)| p.eval(x) * vi).fold(T::zero(), |a, c| a + c);
            v.norm() * (T::one() + epsilon * w.eval(x)) + drift
        }))
    }
}
