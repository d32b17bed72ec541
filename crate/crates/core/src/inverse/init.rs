use nalgebra::DMatrix;
use serde::Serialize;

use super::access::DataAccess;
use super::StateZ;
use crate::error::{DixError, Result};
use crate::forward::{jacobi_solution_operator, CurvatureCurve};
use crate::numerics::{centered_window, fornberg_weights};
use crate::scalar::{abs, lit, to_f64, Real};

/// How the anchor column `r_a ∈ I0` is chosen for each `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorPolicy<T: Real> {
    /// Best-conditioned column, switching only when the current one falls
    /// below `hysteresis` times the best quality.
    BestConditioned { hysteresis: f64 },
    /// `(t_switch, r)` pairs in decreasing `t_switch`: column `r` is used for
    /// `t ≤ t_switch` until the next entry takes over.
    Schedule(Vec<(T, T)>),
}

impl<T: Real> Default for AnchorPolicy<T> {
    fn default() -> Self {
        Self::BestConditioned { hysteresis: 0.5 }
    }
}

/// A run of consecutive `t` values sharing one anchor column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorSegment {
    pub t_top: f64,
    pub t_bottom: f64,
    pub r: f64,
}

/// `Z(0, t)` for every `t` of the data grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState<T: Real> {
    pub t_grid: Vec<T>,
    pub z: Vec<StateZ<T>>,
    pub anchors: Vec<AnchorSegment>,
}

impl<T: Real> InitialState<T> {
    /// Multiplies every state by the same matrix from the right.
    pub fn right_mul(&self, a: &DMatrix<T>) -> Self {
        Self { t_grid: self.t_grid.clone(), z: self.z.iter().map(|z| z.right_mul(a)).collect(), anchors: self.anchors.clone() }
    }
}

/// Candidate widths of the `t` stencil; the widest also sets the window
/// over which anchor quality is measured.
const T_WIDTHS: [usize; 4] = [7, 9, 11, 13];
const T_STENCIL: usize = 13;

/// `1 / (1 + ‖s‖)` for a valid cell, `0` otherwise.
fn cell_quality<T: Real>(s: Option<&DMatrix<T>>) -> f64 {
    s.map_or(0.0, |s| 1.0 / (1.0 + to_f64(s.norm())))
}

fn check_small_square<T: Real>(access: &DataAccess<T>) -> Result<()> {
    let eps = access.epsilon();
    for &t in access.t_grid().iter().filter(|t| abs(**t) < eps) {
        for &r in access.r_grid() {
            if abs(r - t) > access.step() * lit(0.5) && access.s(r, t)?.is_none() {
                return Err(DixError::Domain(format!(
                    "conjugate pair ({}, {}) inside I0 × I0: epsilon is too large for this geodesic",
                    to_f64(r),
                    to_f64(t)
                )));
            }
        }
    }
    Ok(())
}

fn stencil_derivatives<T: Real>(
    access: &DataAccess<T>,
    r: T,
    it: usize,
    width: usize,
) -> Result<([DMatrix<T>; 4], f64)> {
    let t_grid = access.t_grid();
    let window = centered_window(it, width, t_grid.len());
    let nodes: Vec<T> = t_grid[window].to_vec();
    let w = fornberg_weights(t_grid[it], &nodes, 3);
    let m = access.grid().dim - 1;
    let mut out = [DMatrix::zeros(m, m), DMatrix::zeros(m, m), DMatrix::zeros(m, m), DMatrix::zeros(m, m)];
    let mut noise = 0.0;
    for (i, t) in nodes.iter().enumerate() {
        let s = access.s(r, *t)?.ok_or_else(|| DixError::Initialization {
            t_lo: to_f64(nodes[0]),
            t_hi: to_f64(*nodes.last().unwrap()),
        })?;
        for (k, d) in out.iter_mut().enumerate() {
            *d += s * w[k][i];
        }
        noise += to_f64(abs(w[3][i]) * s.amax()) * to_f64(crate::scalar::eps::<T>());
    }
    Ok((out, noise))
}

/// Derivatives `∂_t^k s(r, t)`, `k = 0..3`.
///
/// The stencil width is picked per point: the third derivative of each width
/// is compared with the next wider one as a truncation estimate, and rounding
/// noise is bounded by the weights, so wide stencils are used close to
/// singularities of `s` and narrow ones where `s` is flat.
fn s_derivatives<T: Real>(access: &DataAccess<T>, r: T, it: usize) -> Result<[DMatrix<T>; 4]> {
    let mut estimates =
        T_WIDTHS.iter().map(|&w| stencil_derivatives(access, r, it, w)).collect::<Result<Vec<_>>>()?;
    let mut best = (f64::INFINITY, 0);
    for i in 0..estimates.len() - 1 {
        let truncation = to_f64((&estimates[i].0[3] - &estimates[i + 1].0[3]).amax());
        let err = truncation + estimates[i].1;
        if err < best.0 {
            best = (err, i);
        }
    }
    Ok(estimates.swap_remove(best.1).0)
}

fn choose_anchors<T: Real>(access: &DataAccess<T>, policy: &AnchorPolicy<T>) -> Result<Vec<usize>> {
    let (r_grid, t_grid) = (access.r_grid(), access.t_grid());
    let (nr, nt) = (r_grid.len(), t_grid.len());
    // cell quality, then its minimum over the t stencil
    let mut cell = vec![0.0; nr * nt];
    for it in 0..nt {
        for ir in 0..nr {
            cell[it * nr + ir] = cell_quality(access.s(r_grid[ir], t_grid[it])?);
        }
    }
    let quality = |ir: usize, it: usize| {
        centered_window(it, T_STENCIL, nt).map(|k| cell[k * nr + ir]).fold(f64::INFINITY, f64::min)
    };
    let r_index = |r: T| {
        r_grid.iter().position(|x| abs(*x - r) <= access.step() * lit(1e-6)).ok_or_else(|| {
            DixError::Config(format!("anchor r = {} is not a column of the data grid", to_f64(r)))
        })
    };
    let mut anchors = vec![usize::MAX; nt];
    let mut current: Option<usize> = None;
    let mut uncovered: Option<(usize, usize)> = None;
    for it in (0..nt).rev() {
        let pick = match policy {
            AnchorPolicy::BestConditioned { hysteresis } => {
                let mut best = (0.0, usize::MAX);
                for ir in 0..nr {
                    let q = quality(ir, it);
                    let better = q > best.0 * (1.0 + 1e-9)
                        || (q >= best.0 * (1.0 - 1e-9) && q > 0.0 && abs(r_grid[ir]) < abs(r_grid[best.1.min(nr - 1)]));
                    if better {
                        best = (q, ir);
                    }
                }
                match current {
                    Some(c) if quality(c, it) >= hysteresis * best.0 && quality(c, it) > 0.0 => Some(c),
                    _ if best.0 > 0.0 => Some(best.1),
                    _ => None,
                }
            }
            AnchorPolicy::Schedule(entries) => {
                let entry = entries.iter().rev().find(|(ts, _)| t_grid[it] <= *ts + access.step() * lit(1e-6));
                let entry = entry.or(entries.first());
                match entry {
                    Some((_, r)) => Some(r_index(*r)?).filter(|&ir| quality(ir, it) > 0.0),
                    None => None,
                }
            }
        };
        match pick {
            Some(ir) => {
                if let Some((lo, hi)) = uncovered {
                    return Err(DixError::Initialization { t_lo: to_f64(t_grid[lo]), t_hi: to_f64(t_grid[hi]) });
                }
                anchors[it] = ir;
                current = Some(ir);
            }
            None => {
                uncovered = Some(match uncovered {
                    Some((_, hi)) => (it, hi),
                    None => (it, it),
                });
            }
        }
    }
    if let Some((lo, hi)) = uncovered {
        return Err(DixError::Initialization { t_lo: to_f64(t_grid[lo]), t_hi: to_f64(t_grid[hi]) });
    }
    Ok(anchors)
}

/// Builds `Z(0, t)` for every `t` from the data.
///
/// For each `t` an anchor column `r_a ∈ I0` is chosen where the data is well
/// conditioned. The Jacobi family is fixed there by `j(r_a, t) = I` and
/// `∂_r j(r_a, t) = s(r_a, t)`, so `j_k(r_a, t) = 0` for `k ≥ 1` and
/// `y_k(r_a, t) = ∂_t^k s(r_a, t)`. The eight matrices are then carried to
/// `r = 0` with the curvature estimated on `I0`. The gauge jumps where the
/// anchor changes; `k = j y⁻¹` and hence `Q` do not see it.
pub fn initialize_jacobi_at_zero<T: Real>(
    access: &DataAccess<T>,
    rmat_i0: &CurvatureCurve<T>,
    policy: &AnchorPolicy<T>,
) -> Result<InitialState<T>> {
    check_small_square(access)?;
    let anchors = choose_anchors(access, policy)?;
    let (r_grid, t_grid) = (access.r_grid(), access.t_grid());
    let nt = t_grid.len();
    let m = access.grid().dim - 1;
    let identity = DMatrix::<T>::identity(m, m);
    let mut z: Vec<Option<StateZ<T>>> = vec![None; nt];
    let mut segments = Vec::new();

    let mut it_top = nt - 1;
    loop {
        let ir = anchors[it_top];
        let mut it_bottom = it_top;
        while it_bottom > 0 && anchors[it_bottom - 1] == ir {
            it_bottom -= 1;
        }
        let r_a = r_grid[ir];
        let phi = jacobi_solution_operator(rmat_i0, r_a, T::zero())?;
        for it in it_bottom..=it_top {
            // j(r_a, t) = I, so only the y-part carries t-dependence
            let ds = s_derivatives(access, r_a, it)?;
            let mut state = StateZ::zeros(m);
            state.j[0] = identity.clone();
            state.y = ds;
            z[it] = Some(state.propagate(&phi));
        }
        segments.push(AnchorSegment { t_top: to_f64(t_grid[it_top]), t_bottom: to_f64(t_grid[it_bottom]), r: to_f64(r_a) });
        if it_bottom == 0 {
            break;
        }
        it_top = it_bottom - 1;
    }
    Ok(InitialState {
        t_grid: t_grid.to_vec(),
        z: z.into_iter().map(|s| s.expect("every t assigned to a segment")).collect(),
        anchors: segments,
    })
}
