//! Coordinate charts of Finsler manifolds.
//!
//! Every chart evaluates the Finsler function `F(x, v)`, the fundamental tensor
//! `g(x, v) = ½ ∂²_v F²`, the geodesic spray coefficients `G^i` together with the
//! nonlinear connection `N^i_j = ∂G^i/∂v^j`, and the directional curvature
//! operator `R_v`. Analytic charts use closed forms; numeric charts
//! differentiate an arbitrary Finsler function by finite differences.

mod analytic;
pub mod fd;
mod numeric;
mod polynomial;
mod registry;

use nalgebra::{DMatrix, DVector};

pub use analytic::{ConformalChart, EuclideanChart, FlatRandersChart};
pub use numeric::{NumericChart, NumericSteps, PerturbedRanders};
pub use polynomial::Polynomial;
pub use registry::{chart_by_id, numeric_twin, perturbed_from_fields, CATALOG_IDS};

use crate::error::{DixError, Result};
use crate::scalar::{abs, lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    Analytic,
    Numeric,
}

/// Axis-aligned coordinate box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain<T: Real> {
    pub lo: DVector<T>,
    pub hi: DVector<T>,
}

impl<T: Real> BoxDomain<T> {
    pub fn cube(dim: usize, half_width: T) -> Self {
        Self {
            lo: DVector::from_element(dim, -half_width),
            hi: DVector::from_element(dim, half_width),
        }
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.lo.len()
            && x.iter().zip(self.lo.iter().zip(self.hi.iter())).all(|(&xi, (&l, &h))| xi > l && xi < h)
    }
}

/// Geodesic coefficients and connection at a point of the slit tangent bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct SprayOutput<T: Real> {
    /// `G^i(x, v)`.
    pub g: DVector<T>,
    /// `N^i_j = ∂G^i/∂v^j`.
    pub n: DMatrix<T>,
}

/// Directional curvature operator `(R_v)^i_k` in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureOutput<T: Real> {
    pub r_full: DMatrix<T>,
    pub warning: Option<String>,
}

/// A chart of a Finsler manifold.
///
/// Implementors provide the raw evaluations; the free functions
/// [`fundamental_tensor`], [`geodesic_spray`] and [`curvature_operator_full`]
/// add input validation.
pub trait FinslerChart<T: Real>: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn kind(&self) -> ChartKind;
    fn domain(&self) -> &BoxDomain<T>;
    fn reversible(&self) -> bool;
    fn riemannian(&self) -> bool;

    fn contains(&self, x: &DVector<T>) -> bool {
        self.domain().contains(x)
    }

    fn finsler(&self, x: &DVector<T>, v: &DVector<T>) -> T;

    fn metric_raw(&self, x: &DVector<T>, v: &DVector<T>) -> DMatrix<T>;

    fn spray_raw(&self, x: &DVector<T>, v: &DVector<T>) -> SprayOutput<T>;

    /// `R_v` for `F(x, v) = 1`.
    fn curvature_raw(&self, x: &DVector<T>, v: &DVector<T>) -> CurvatureOutput<T>;
}

fn check_point<T: Real>(chart: &dyn FinslerChart<T>, x: &DVector<T>, v: &DVector<T>) -> Result<()> {
    if x.len() != chart.dim() || v.len() != chart.dim() {
        return Err(DixError::Dimension(format!(
            "chart {} has dimension {}, got x of length {} and v of length {}",
            chart.id(),
            chart.dim(),
            x.len(),
            v.len()
        )));
    }
    if v.iter().all(|c| *c == T::zero()) {
        return Err(DixError::Domain("zero tangent vector".into()));
    }
    if !chart.contains(x) {
        return Err(DixError::Domain(format!(
            "point {:?} outside the domain of chart {}",
            x.iter().map(|c| to_f64(*c)).collect::<Vec<_>>(),
            chart.id()
        )));
    }
    Ok(())
}

/// `g_ij(x, v) = ½ ∂_{v^i} ∂_{v^j} F²`, checked to be symmetric positive definite.
pub fn fundamental_tensor<T: Real>(
    chart: &dyn FinslerChart<T>,
    x: &DVector<T>,
    v: &DVector<T>,
) -> Result<DMatrix<T>> {
    check_point(chart, x, v)?;
    let g = chart.metric_raw(x, v);
    let sym = (&g + g.transpose()) * lit::<T>(0.5);
    let eig = sym.clone().symmetric_eigenvalues();
    if eig.iter().any(|e| *e <= T::zero()) {
        return Err(DixError::Model {
            message: format!("fundamental tensor of {} is not positive definite", chart.id()),
            eigenvalues: eig.iter().map(|e| to_f64(*e)).collect(),
        });
    }
    Ok(sym)
}

/// Geodesic coefficients `G^i` and connection `N^i_j` at `(x, v)`.
pub fn geodesic_spray<T: Real>(
    chart: &dyn FinslerChart<T>,
    x: &DVector<T>,
    v: &DVector<T>,
) -> Result<SprayOutput<T>> {
    check_point(chart, x, v)?;
    let out = chart.spray_raw(x, v);
    if out.g.iter().chain(out.n.iter()).any(|c| !c.is_finite()) {
        return Err(DixError::Model {
            message: format!("singular fundamental tensor in spray of {}", chart.id()),
            eigenvalues: vec![],
        });
    }
    Ok(out)
}

/// Rescales `v` to unit Finsler length.
pub fn normalize<T: Real>(chart: &dyn FinslerChart<T>, x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
    v / chart.finsler(x, v)
}

/// Directional curvature operator `R_v` at `(x, v)`; `v` is first rescaled to
/// `F(x, v) = 1`.
pub fn curvature_operator_full<T: Real>(
    chart: &dyn FinslerChart<T>,
    x: &DVector<T>,
    v: &DVector<T>,
) -> Result<CurvatureOutput<T>> {
    check_point(chart, x, v)?;
    let f = chart.finsler(x, v);
    let unit = if abs(f - T::one()) > lit(1e-10) { v / f } else { v.clone() };
    Ok(chart.curvature_raw(x, &unit))
}

/// `g_v`-inner product of two vectors at `(x, v)`.
pub fn inner<T: Real>(g: &DMatrix<T>, a: &DVector<T>, b: &DVector<T>) -> T {
    (a.transpose() * g * b)[(0, 0)]
}
