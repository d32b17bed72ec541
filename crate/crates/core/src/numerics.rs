//! Small numerical building blocks: finite-difference weights, interpolation on
//! uniform grids, cumulative quadrature, and scalar root/minimum refinement.

use nalgebra::DMatrix;

use crate::scalar::{abs, lit, Real};

/// Finite-difference weights for derivatives `0..=max_order` at `x0` from
/// arbitrary distinct `nodes` (Fornberg's recursion).
///
/// `weights[k][i]` multiplies `f(nodes[i])` in the estimate of the k-th derivative.
pub fn fornberg_weights<T: Real>(x0: T, nodes: &[T], max_order: usize) -> Vec<Vec<T>> {
    let n = nodes.len();
    let mut c = vec![vec![T::zero(); n]; max_order + 1];
    c[0][0] = T::one();
    let mut c1 = T::one();
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = T::one();
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    let kk: T = lit(k as f64);
                    c[k][i] = c1 * (kk * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                let kk: T = lit(k as f64);
                c[k][j] = (c4 * c[k][j] - kk * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Picks `width` consecutive indices out of `0..len` centred on `center` as far
/// as the bounds allow.
pub fn centered_window(center: usize, width: usize, len: usize) -> std::ops::Range<usize> {
    let width = width.min(len);
    let half = width / 2;
    let start = center.saturating_sub(half).min(len - width);
    start..start + width
}

/// Cumulative quadrature weights on a uniform grid with `m_max + 1` nodes:
/// `w[m]` integrates from node 0 to node `m` in units of the spacing.
///
/// Fourth order (composite Simpson with a 3/8 tail) when `m_max >= 3`;
/// short grids fall back to the trapezoid (`m_max = 1`) or the quadratic
/// rule (`m_max = 2`).
pub fn cumulative_weights(m_max: usize) -> Vec<Vec<f64>> {
    assert!(m_max >= 1, "cumulative quadrature needs at least 2 nodes");
    let mut w = vec![vec![0.0; m_max + 1]; m_max + 1];
    if m_max == 1 {
        w[1] = vec![0.5, 0.5];
        return w;
    }
    if m_max == 2 {
        w[1] = vec![5.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0];
        w[2] = vec![1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0];
        return w;
    }
    for (m, row) in w.iter_mut().enumerate().skip(1) {
        if m == 1 {
            row[0] = 9.0 / 24.0;
            row[1] = 19.0 / 24.0;
            row[2] = -5.0 / 24.0;
            row[3] = 1.0 / 24.0;
            continue;
        }
        let simpson_end = if m % 2 == 0 { m } else { m - 3 };
        let mut i = 0;
        while i + 2 <= simpson_end {
            row[i] += 1.0 / 3.0;
            row[i + 1] += 4.0 / 3.0;
            row[i + 2] += 1.0 / 3.0;
            i += 2;
        }
        if m % 2 == 1 {
            let s = m - 3;
            row[s] += 3.0 / 8.0;
            row[s + 1] += 9.0 / 8.0;
            row[s + 2] += 9.0 / 8.0;
            row[s + 3] += 3.0 / 8.0;
        }
    }
    w
}

/// Matrix-valued samples on a uniform grid, interpolated with a sliding
/// six-point Lagrange stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries<T: Real> {
    pub start: T,
    pub step: T,
    pub values: Vec<DMatrix<T>>,
}

const LAGRANGE_POINTS: usize = 6;

impl<T: Real> UniformSeries<T> {
    pub fn new(start: T, step: T, values: Vec<DMatrix<T>>) -> Self {
        assert!(!values.is_empty(), "empty series");
        assert!(step > T::zero(), "series step must be positive");
        Self { start, step, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> T {
        self.start + self.step * lit::<T>((self.values.len() - 1) as f64)
    }

    pub fn node(&self, i: usize) -> T {
        self.start + self.step * lit::<T>(i as f64)
    }

    pub fn contains(&self, t: T) -> bool {
        let slack = self.step * lit(1e-9);
        t >= self.start - slack && t <= self.end() + slack
    }

    /// Interpolated value at `t`; extrapolates from the edge stencil outside the range.
    pub fn at(&self, t: T) -> DMatrix<T> {
        let n = self.values.len();
        if n == 1 {
            return self.values[0].clone();
        }
        let pos = (t - self.start) / self.step;
        let nearest = pos.round();
        if abs(pos - nearest) < lit(1e-12) {
            let i = to_index(nearest);
            if i < n as i64 && i >= 0 {
                return self.values[i as usize].clone();
            }
        }
        let width = LAGRANGE_POINTS.min(n);
        let base = to_index(pos.floor());
        let lo = (base - (width as i64 / 2 - 1)).clamp(0, (n - width) as i64) as usize;
        let mut out = DMatrix::zeros(self.values[0].nrows(), self.values[0].ncols());
        for i in 0..width {
            let xi: T = lit((lo + i) as f64);
            let mut w = T::one();
            for j in 0..width {
                if i != j {
                    let xj: T = lit((lo + j) as f64);
                    w *= (pos - xj) / (xi - xj);
                }
            }
            out += &self.values[lo + i] * w;
        }
        out
    }
}

fn to_index<T: Real>(x: T) -> i64 {
    crate::scalar::to_f64(x) as i64
}

/// Cubic Hermite interpolation of a matrix function from values and
/// derivatives at two nodes.
pub fn hermite<T: Real>(
    t0: T,
    t1: T,
    f0: &DMatrix<T>,
    d0: &DMatrix<T>,
    f1: &DMatrix<T>,
    d1: &DMatrix<T>,
    t: T,
) -> (DMatrix<T>, DMatrix<T>) {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let two: T = lit(2.0);
    let three: T = lit(3.0);
    let six: T = lit(6.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = two * s3 - three * s2 + T::one();
    let h10 = s3 - two * s2 + s;
    let h01 = -two * s3 + three * s2;
    let h11 = s3 - s2;
    let value = f0 * h00 + d0 * (h10 * h) + f1 * h01 + d1 * (h11 * h);
    let dh00 = (six * s2 - six * s) / h;
    let dh10 = three * s2 - two * s * two + T::one();
    let dh01 = (-six * s2 + six * s) / h;
    let dh11 = three * s2 - two * s;
    let deriv = f0 * dh00 + d0 * dh10 + f1 * dh01 + d1 * dh11;
    (value, deriv)
}

/// Smallest singular value of a square matrix.
pub fn sigma_min<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 1 {
        return abs(m[(0, 0)]);
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or_else(|| lit(f64::MAX)), |a, b| a.min(b))
}

/// Largest singular value (spectral norm).
pub fn sigma_max<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 1 && m.ncols() == 1 {
        return abs(m[(0, 0)]);
    }
    m.clone().singular_values().iter().copied().fold(T::zero(), |a, b| a.max(b))
}

/// Bisection for a sign change of `f` on `[a, b]`.
pub fn bisect<T: Real>(mut a: T, mut b: T, tol: T, f: impl Fn(T) -> T) -> T {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = (a + b) * lit(0.5);
        if abs(b - a) <= tol {
            return m;
        }
        let fm = f(m);
        if fm == T::zero() {
            return m;
        }
        if (fa < T::zero()) == (fm < T::zero()) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    (a + b) * lit(0.5)
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
pub fn golden_min<T: Real>(mut a: T, mut b: T, tol: T, f: impl Fn(T) -> T) -> T {
    let inv_phi: T = lit(0.618_033_988_749_894_9);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..300 {
        if abs(b - a) <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * inv_phi;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * inv_phi;
            fd = f(d);
        }
    }
    (a + b) * lit(0.5)
}
