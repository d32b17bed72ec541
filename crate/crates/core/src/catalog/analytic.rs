use nalgebra::{DMatrix, DVector};

use super::{BoxDomain, ChartKind, CurvatureOutput, FinslerChart, SprayOutput};
use crate::scalar::{lit, Real};

/// Flat `ℝⁿ` with `F(x, v) = |v|`.
#[derive(Debug, Clone)]
pub struct EuclideanChart<T: Real> {
    id: String,
    dim: usize,
    domain: BoxDomain<T>,
}

impl<T: Real> EuclideanChart<T> {
    pub fn new(dim: usize) -> Self {
        Self { id: format!("euclidean-{dim}"), dim, domain: BoxDomain::cube(dim, lit(50.0)) }
    }
}

impl<T: Real> FinslerChart<T> for EuclideanChart<T> {
    fn id(&self) -> &str {
        &self.id
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> ChartKind {
        ChartKind::Analytic
    }
    fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }
    fn reversible(&self) -> bool {
        true
    }
    fn riemannian(&self) -> bool {
        true
    }
    fn finsler(&self, _x: &DVector<T>, v: &DVector<T>) -> T {
        v.norm()
    }
    fn metric_raw(&self, _x: &DVector<T>, _v: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(self.dim, self.dim)
    }
    fn spray_raw(&self, _x: &DVector<T>, _v: &DVector<T>) -> SprayOutput<T> {
        SprayOutput { g: DVector::zeros(self.dim), n: DMatrix::zeros(self.dim, self.dim) }
    }
    fn curvature_raw(&self, _x: &DVector<T>, _v: &DVector<T>) -> CurvatureOutput<T> {
        CurvatureOutput { r_full: DMatrix::zeros(self.dim, self.dim), warning: None }
    }
}

/// Constant curvature `K = ±1` in a conformally flat chart:
/// `g = λ(x)² δ` with `λ = 2 / (1 + K|x|²)`.
///
/// `K = +1` is the stereographic chart of the unit sphere (south pole at the
/// origin), `K = -1` the Poincaré ball model of hyperbolic space.
#[derive(Debug, Clone)]
pub struct ConformalChart<T: Real> {
    id: String,
    dim: usize,
    curvature: T,
    domain: BoxDomain<T>,
}

impl<T: Real> ConformalChart<T> {
    pub fn sphere(dim: usize) -> Self {
        Self {
            id: format!("sphere-{dim}"),
            dim,
            curvature: T::one(),
            domain: BoxDomain::cube(dim, lit(6.0)),
        }
    }

    pub fn hyperbolic(dim: usize) -> Self {
        Self {
            id: format!("hyperbolic-{dim}"),
            dim,
            curvature: -T::one(),
            domain: BoxDomain::cube(dim, T::one()),
        }
    }

    pub fn sectional_curvature(&self) -> T {
        self.curvature
    }

    /// Conformal factor `λ(x)`.
    pub fn factor(&self, x: &DVector<T>) -> T {
        lit::<T>(2.0) / (T::one() + self.curvature * x.norm_squared())
    }

    /// Gradient of `log λ`.
    fn log_factor_gradient(&self, x: &DVector<T>) -> DVector<T> {
        x * (lit::<T>(-2.0) * self.curvature / (T::one() + self.curvature * x.norm_squared()))
    }
}

impl<T: Real> FinslerChart<T> for ConformalChart<T> {
    fn id(&self) -> &str {
        &self.id
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> ChartKind {
        ChartKind::Analytic
    }
    fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }
    fn reversible(&self) -> bool {
        true
    }
    fn riemannian(&self) -> bool {
        true
    }
    fn contains(&self, x: &DVector<T>) -> bool {
        self.domain.contains(x) && T::one() + self.curvature * x.norm_squared() > lit(1e-12)
    }
    fn finsler(&self, x: &DVector<T>, v: &DVector<T>) -> T {
        self.factor(x) * v.norm()
    }
    fn metric_raw(&self, x: &DVector<T>, _v: &DVector<T>) -> DMatrix<T> {
        let l = self.factor(x);
        DMatrix::identity(self.dim, self.dim) * (l * l)
    }
    fn spray_raw(&self, x: &DVector<T>, v: &DVector<T>) -> SprayOutput<T> {
        // Γ^i_jk = δ^i_j ∂_kφ + δ^i_k ∂_jφ − δ_jk ∂_iφ with φ = log λ
        let dphi = self.log_factor_gradient(x);
        let vd = v.dot(&dphi);
        let half: T = lit(0.5);
        let g = v * vd - &dphi * (half * v.norm_squared());
        let n = v * dphi.transpose() + DMatrix::identity(self.dim, self.dim) * vd - &dphi * v.transpose();
        SprayOutput { g, n }
    }
    fn curvature_raw(&self, x: &DVector<T>, v: &DVector<T>) -> CurvatureOutput<T> {
        // R(V, v)v = K (g(v, v) V − g(V, v) v)
        let g = self.metric_raw(x, v);
        let gv = &g * v;
        let vv = v.dot(&gv);
        let r = (DMatrix::identity(self.dim, self.dim) * vv - v * gv.transpose()) * self.curvature;
        CurvatureOutput { r_full: r, warning: None }
    }
}

/// Minkowski–Randers norm `F(v) = |v| + b·v` with constant `b`, `|b| < 1`.
///
/// Flat and non-reversible: geodesics are straight lines.
#[derive(Debug, Clone)]
pub struct FlatRandersChart<T: Real> {
    id: String,
    b: DVector<T>,
    domain: BoxDomain<T>,
}

impl<T: Real> FlatRandersChart<T> {
    pub fn new(b: DVector<T>) -> Self {
        assert!(b.norm() < T::one(), "Randers drift must satisfy |b| < 1");
        let dim = b.len();
        Self { id: format!("randers-flat-{dim}"), b, domain: BoxDomain::cube(dim, lit(50.0)) }
    }

    pub fn drift(&self) -> &DVector<T> {
        &self.b
    }
}

impl<T: Real> FinslerChart<T> for FlatRandersChart<T> {
    fn id(&self) -> &str {
        &self.id
    }
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn kind(&self) -> ChartKind {
        ChartKind::Analytic
    }
    fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }
    fn reversible(&self) -> bool {
        false
    }
    fn riemannian(&self) -> bool {
        false
    }
    fn finsler(&self, _x: &DVector<T>, v: &DVector<T>) -> T {
        v.norm() + self.b.dot(v)
    }
    fn metric_raw(&self, x: &DVector<T>, v: &DVector<T>) -> DMatrix<T> {
        let n = self.dim();
        let a = v.norm();
        let f = self.finsler(x, v);
        let u = v / a;
        let l = &u + &self.b;
        (DMatrix::identity(n, n) - &u * u.transpose()) * (f / a) + &l * l.transpose()
    }
    fn spray_raw(&self, _x: &DVector<T>, _v: &DVector<T>) -> SprayOutput<T> {
        let n = self.dim();
        SprayOutput { g: DVector::zeros(n), n: DMatrix::zeros(n, n) }
    }
    fn curvature_raw(&self, _x: &DVector<T>, _v: &DVector<T>) -> CurvatureOutput<T> {
        let n = self.dim();
        CurvatureOutput { r_full: DMatrix::zeros(n, n), warning: None }
    }
}
