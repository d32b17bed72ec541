//! Reconstruction of the curvature matrix, Jacobi matrices and conjugate
//! points along a geodesic from the shape-operator grid on `I0 × I1`.
//!
//! The unknowns are the `t`-derivatives `j_k = ∂_t^k j` and `y_k = ∂_r j_k`,
//! `k = 0..3`, which all satisfy the Jacobi equation in `r`. On the diagonal
//! the curvature is `rmat(r) = −½ Q(Z(r, r))`, so marching `r` downward in
//! small blocks and solving each block by fixed-point iteration recovers
//! `rmat` without ever inverting `j` away from the diagonal.

mod access;
mod estimate;
mod init;
mod io;
mod march;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DixError, Result};
use crate::forward::{is_singular, CurvatureCurve};
use crate::numerics::{golden_min, hermite, sigma_max, sigma_min};
use crate::scalar::{abs, lit, to_f64, Real};

pub use access::{DataAccess, HygieneReport};
pub use estimate::{estimate_curvature_on_i0, estimate_curvature_riccati, CurvatureEstimate, ThirdDerivativeStencil};
pub use init::{initialize_jacobi_at_zero, AnchorPolicy, AnchorSegment, InitialState};
pub use io::{read_conjugates_csv, read_result_curve, write_conjugates_csv, write_diagnostics_json, write_rmat_csv};
pub use march::{march_reconstruct, reconstruct, I0Estimator, MarchOptions, ReconstructOptions};

/// `Z = (j_0, …, j_3, y_0, …, y_3)` at one `(r, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateZ<T: Real> {
    pub j: [DMatrix<T>; 4],
    pub y: [DMatrix<T>; 4],
}

impl<T: Real> StateZ<T> {
    pub fn zeros(m: usize) -> Self {
        let z = DMatrix::zeros(m, m);
        Self { j: [z.clone(), z.clone(), z.clone(), z.clone()], y: [z.clone(), z.clone(), z.clone(), z] }
    }

    pub fn dim(&self) -> usize {
        self.j[0].nrows()
    }

    /// All eight matrices multiplied by `a` from the right.
    pub fn right_mul(&self, a: &DMatrix<T>) -> Self {
        Self { j: self.j.clone().map(|m| m * a), y: self.y.clone().map(|m| m * a) }
    }

    /// Applies a Jacobi propagator `[[pjj, pjy], [pyj, pyy]]` to each pair `(j_k, y_k)`.
    pub fn propagate(&self, phi: &DMatrix<T>) -> Self {
        let m = self.dim();
        let pjj = phi.view((0, 0), (m, m));
        let pjy = phi.view((0, m), (m, m));
        let pyj = phi.view((m, 0), (m, m));
        let pyy = phi.view((m, m), (m, m));
        let mut out = Self::zeros(m);
        for k in 0..4 {
            out.j[k] = pjj * &self.j[k] + pjy * &self.y[k];
            out.y[k] = pyj * &self.j[k] + pyy * &self.y[k];
        }
        out
    }

    /// Curvature on the diagonal, `−½ Q(j_1, j_2, j_3, y_0, y_1, y_2)`.
    pub fn diagonal_curvature(&self) -> Result<DMatrix<T>> {
        let q = q_function(&self.j[1], &self.j[2], &self.j[3], &self.y[0], &self.y[1], &self.y[2])?;
        Ok(q * lit::<T>(-0.5))
    }

    fn max_abs(&self) -> T {
        self.j.iter().chain(self.y.iter()).map(|m| m.amax()).fold(T::zero(), |a, b| a.max(b))
    }

    fn max_diff(&self, other: &Self) -> T {
        self.j
            .iter()
            .chain(self.y.iter())
            .zip(other.j.iter().chain(other.y.iter()))
            .map(|(a, b)| (a - b).amax())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// `Q = A3 B0⁻¹ − 3 A2 B0⁻¹ B1 B0⁻¹ + 6 A1 B0⁻¹ B1 B0⁻¹ B1 B0⁻¹ − 3 A1 B0⁻¹ B2 B0⁻¹`.
///
/// `Q` is the third `t`-derivative of `k = j y⁻¹` on the diagonal expressed in
/// the Taylor data of `j`; it is invariant under `A_k ↦ A_k M`, `B_k ↦ B_k M`.
pub fn q_function<T: Real>(
    a1: &DMatrix<T>,
    a2: &DMatrix<T>,
    a3: &DMatrix<T>,
    b0: &DMatrix<T>,
    b1: &DMatrix<T>,
    b2: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let inv = b0
        .clone()
        .try_inverse()
        .filter(|_| !is_singular(b0))
        .ok_or_else(|| DixError::Domain("Q is undefined: B0 is singular".into()))?;
    let three: T = lit(3.0);
    let six: T = lit(6.0);
    let p = &inv * b1 * &inv; // B0⁻¹ B1 B0⁻¹
    let out = a3 * &inv - a2 * &p * three + a1 * &p * b1 * &inv * six - a1 * &inv * b2 * &inv * three;
    Ok(out)
}

/// Spectral condition number of `m`.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let lo = sigma_min(m);
    if lo == T::zero() {
        return lit(f64::INFINITY);
    }
    sigma_max(m) / lo
}

/// Matrices stored densely over an `r × t` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField<T: Real> {
    m: usize,
    nr: usize,
    nt: usize,
    data: Vec<T>,
}

impl<T: Real> MatrixField<T> {
    pub fn new(m: usize, nr: usize, nt: usize) -> Self {
        Self { m, nr, nt, data: vec![T::zero(); m * m * nr * nt] }
    }

    fn offset(&self, ir: usize, it: usize) -> usize {
        (it * self.nr + ir) * self.m * self.m
    }

    pub fn get(&self, ir: usize, it: usize) -> DMatrix<T> {
        let o = self.offset(ir, it);
        DMatrix::from_column_slice(self.m, self.m, &self.data[o..o + self.m * self.m])
    }

    pub fn set(&mut self, ir: usize, it: usize, value: &DMatrix<T>) {
        let o = self.offset(ir, it);
        self.data[o..o + self.m * self.m].copy_from_slice(value.as_slice());
    }
}

/// Per-block record of the marching scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRecord {
    pub r_top: f64,
    pub r_bottom: f64,
    pub nodes: usize,
    pub iterations: usize,
    /// Largest observed ratio of successive fixed-point corrections.
    pub contraction: f64,
    /// `‖Q(Z(ρ₀, ρ₀))‖` plus a unit safety margin.
    pub alpha_hat: f64,
    /// Largest `‖j_0(r, r)‖` before enforcement in the final sweep.
    pub enforcement_residual: f64,
    /// How often `δ` was halved before this block converged.
    pub halvings: usize,
}

/// Diagnostics of a reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub blocks: Vec<BlockRecord>,
    pub anchors: Vec<AnchorSegment>,
    pub max_contraction: f64,
    pub max_enforcement_residual: f64,
    pub warnings: Vec<String>,
    pub hygiene: Option<HygieneReport>,
}

/// Output of [`march_reconstruct`].
#[derive(Debug, Clone)]
pub struct ReconstructionResult<T: Real> {
    /// Recovered curvature on `[−T, 0]`.
    pub rmat_rec: CurvatureCurve<T>,
    /// Curvature on `I0` estimated directly from the data.
    pub rmat_i0: CurvatureCurve<T>,
    /// Ascending `r` lattice of the stored Jacobi matrices, from `−T` to `ε − step`.
    pub r_nodes: Vec<T>,
    pub t_grid: Vec<T>,
    /// `j_0` at `(r_nodes[ir], t_grid[it])`, up to a `t`-dependent right factor.
    pub jmat: MatrixField<T>,
    /// `y_0 = ∂_r j_0` at the same lattice.
    pub ymat: MatrixField<T>,
    pub conjugates: Vec<(T, T)>,
    pub diagnostics: Diagnostics,
}

impl<T: Real> ReconstructionResult<T> {
    pub fn step(&self) -> T {
        self.r_nodes[1] - self.r_nodes[0]
    }

    pub fn r_index(&self, r: T) -> Option<usize> {
        lattice_index(&self.r_nodes, r)
    }

    pub fn t_index(&self, t: T) -> Option<usize> {
        lattice_index(&self.t_grid, t)
    }

    /// Curvature at `t`, from the march for `t ≤ 0` and from the data on `I0` above.
    pub fn rmat_at(&self, t: T) -> DMatrix<T> {
        if t <= T::zero() {
            self.rmat_rec.at(t)
        } else {
            self.rmat_i0.at(t)
        }
    }
}

fn lattice_index<T: Real>(grid: &[T], x: T) -> Option<usize> {
    if grid.len() < 2 {
        return None;
    }
    let step = grid[1] - grid[0];
    let k = to_f64(((x - grid[0]) / step).round());
    if k < 0.0 || k as usize >= grid.len() {
        return None;
    }
    let i = k as usize;
    (abs(grid[i] - x) <= step * lit(1e-6)).then_some(i)
}

/// Shape operator and inverse shape operator recovered at a lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeAndK<T: Real> {
    pub s: Option<DMatrix<T>>,
    pub k: Option<DMatrix<T>>,
}

/// `s = y j⁻¹` where `j` is invertible, `k = j y⁻¹` where `y` is; on the
/// diagonal `s` is undefined and `k = 0`.
pub fn recover_shape_and_k<T: Real>(result: &ReconstructionResult<T>, r: T, t: T) -> Result<ShapeAndK<T>> {
    let (ir, it) = match (result.r_index(r), result.t_index(t)) {
        (Some(ir), Some(it)) => (ir, it),
        _ => {
            return Err(DixError::Domain(format!(
                "({}, {}) is not on the reconstruction lattice",
                to_f64(r),
                to_f64(t)
            )))
        }
    };
    let m = result.jmat.m;
    if abs(r - t) <= result.step() * lit(1e-6) {
        return Ok(ShapeAndK { s: None, k: Some(DMatrix::zeros(m, m)) });
    }
    let pair = crate::forward::JacobiPair { j: result.jmat.get(ir, it), y: result.ymat.get(ir, it) };
    Ok(ShapeAndK { s: crate::forward::shape_matrix(&pair), k: crate::forward::inverse_shape_matrix(&pair) })
}

/// Conjugate pairs `(r, t)` off the diagonal of the reconstruction lattice.
pub fn detect_conjugates<T: Real>(result: &ReconstructionResult<T>) -> Vec<(T, T)> {
    conjugates_on_lattice(&result.r_nodes, &result.t_grid, |ir, it| (result.jmat.get(ir, it), result.ymat.get(ir, it)))
}

/// Conjugate pairs on an `r × t` lattice of Jacobi matrices: local minima of
/// `σ_min(j)` along `r` for each `t`, refined on the cubic Hermite interpolant
/// of `(j, y)` and accepted when `σ_min(j) ≤ 1e-6 σ_max(y)`. Pairs within two
/// lattice steps or `1e-3` of the diagonal are skipped.
pub fn conjugates_on_lattice<T: Real>(
    r_nodes: &[T],
    t_grid: &[T],
    pair: impl Fn(usize, usize) -> (DMatrix<T>, DMatrix<T>) + Sync,
) -> Vec<(T, T)> {
    use rayon::prelude::*;
    let nr = r_nodes.len();
    if nr < 2 {
        return Vec::new();
    }
    let h = r_nodes[1] - r_nodes[0];
    let exclusion: T = lit(1e-3);
    let mut found: Vec<(T, T)> = (0..t_grid.len())
        .into_par_iter()
        .flat_map_iter(|it| {
            let t = t_grid[it];
            let nodes: Vec<(DMatrix<T>, DMatrix<T>)> = (0..nr).map(|ir| pair(ir, it)).collect();
            let smin: Vec<T> = nodes.iter().map(|p| sigma_min(&p.0)).collect();
            let mut local = Vec::new();
            for ir in 0..nr {
                let left = if ir > 0 { smin[ir - 1] } else { lit(f64::INFINITY) };
                let right = if ir + 1 < nr { smin[ir + 1] } else { lit(f64::INFINITY) };
                if !(smin[ir] <= left && smin[ir] < right) {
                    continue;
                }
                if abs(r_nodes[ir] - t) <= h * lit(2.0) {
                    continue;
                }
                let lo = ir.saturating_sub(1);
                let hi = (ir + 1).min(nr - 1);
                let interp = |r: T| {
                    let i0 = if r <= r_nodes[ir] { lo.min(ir) } else { ir };
                    let i1 = if r <= r_nodes[ir] { ir } else { hi };
                    if i0 == i1 {
                        return nodes[i0].clone();
                    }
                    hermite(r_nodes[i0], r_nodes[i1], &nodes[i0].0, &nodes[i0].1, &nodes[i1].0, &nodes[i1].1, r)
                };
                let r_star = golden_min(r_nodes[lo], r_nodes[hi], h * lit(1e-9), |r| sigma_min(&interp(r).0));
                let (j, y) = interp(r_star);
                if abs(r_star - t) > exclusion && sigma_min(&j) <= lit::<T>(1e-6) * sigma_max(&y) {
                    local.push((r_star, t));
                }
            }
            local
        })
        .collect();
    found.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap_or(std::cmp::Ordering::Equal));
    found
}
