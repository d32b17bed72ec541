use nalgebra::DMatrix;
use rayon::prelude::*;

use super::access::DataAccess;
use super::estimate::{estimate_curvature_on_i0, estimate_curvature_riccati, ThirdDerivativeStencil};
use super::init::{initialize_jacobi_at_zero, AnchorPolicy, InitialState};
use super::{detect_conjugates, q_function, BlockRecord, Diagnostics, MatrixField, ReconstructionResult, StateZ};
use crate::error::{DixError, Result};
use crate::forward::{jacobi_solution_operator, CurvatureCurve, SphereDataGrid};
use crate::numerics::{cumulative_weights, UniformSeries};
use crate::scalar::{lit, to_f64, Real};

/// Controls of the block-marching scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct MarchOptions {
    /// Grid steps per block; `None` uses `ε / 4`.
    pub initial_steps: Option<usize>,
    /// Smallest block before the march gives up. The effective floor is
    /// `max(min_steps, ε / (64 step))`.
    pub min_steps: usize,
    /// Relative change at which the fixed-point iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// A block that stalls below `stagnation_factor · tolerance` is accepted
    /// with a warning.
    pub stagnation_factor: f64,
}

impl Default for MarchOptions {
    fn default() -> Self {
        Self { initial_steps: None, min_steps: 4, tolerance: 1e-12, max_iterations: 50, stagnation_factor: 1e3 }
    }
}

/// How the curvature on `I0` is obtained from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum I0Estimator {
    /// Third `t`-derivative of `k` at the diagonal.
    Diagonal(ThirdDerivativeStencil),
    /// Riccati equation on the best-conditioned `t` column.
    Riccati,
}

/// Everything needed to run the reconstruction from a data grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructOptions<T: Real> {
    /// Reject reads outside `I0` instead of counting them.
    pub strict: bool,
    pub anchor: AnchorPolicy<T>,
    pub i0_estimator: I0Estimator,
    pub march: MarchOptions,
}

impl<T: Real> Default for ReconstructOptions<T> {
    fn default() -> Self {
        Self {
            strict: false,
            anchor: AnchorPolicy::default(),
            i0_estimator: I0Estimator::Riccati,
            march: MarchOptions::default(),
        }
    }
}

/// Estimates the curvature on `I0`, initializes `Z(0, ·)` and marches down to `−T`.
pub fn reconstruct<T: Real>(grid: &SphereDataGrid<T>, opts: &ReconstructOptions<T>) -> Result<ReconstructionResult<T>> {
    let access = DataAccess::new(grid, opts.strict);
    let estimate = match opts.i0_estimator {
        I0Estimator::Diagonal(stencil) => estimate_curvature_on_i0(&access, stencil)?,
        I0Estimator::Riccati => estimate_curvature_riccati(&access)?,
    };
    let init = initialize_jacobi_at_zero(&access, &estimate.curve, &opts.anchor)?;
    let mut result = march_reconstruct(&access, &estimate.curve, &init, &opts.march)?;
    result.diagnostics.warnings.splice(0..0, estimate.warnings);
    result.diagnostics.hygiene = Some(access.report());
    Ok(result)
}

/// `(∂_r j_k, ∂_r y_k) = (y_k, −R j_k)`.
fn rhs<T: Real>(z: &StateZ<T>, r: &DMatrix<T>) -> StateZ<T> {
    StateZ { j: z.y.clone(), y: z.j.clone().map(|j| -(r * j)) }
}

fn axpy<T: Real>(acc: &mut StateZ<T>, a: T, x: &StateZ<T>) {
    for k in 0..4 {
        acc.j[k] += &x.j[k] * a;
        acc.y[k] += &x.y[k] * a;
    }
}

fn jacobi_generator<T: Real>(r: &DMatrix<T>) -> DMatrix<T> {
    let m = r.nrows();
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    a.view_mut((0, m), (m, m)).fill_with_identity();
    a.view_mut((m, 0), (m, m)).copy_from(&(-r));
    a
}

struct Block<T: Real> {
    /// Curvature at `ρ_0 − mΔ`, `m = 0..=M`.
    curvature: Vec<DMatrix<T>>,
    /// Propagators from `ρ_0` to each node.
    propagators: Vec<DMatrix<T>>,
    iterations: usize,
    contraction: f64,
    enforcement: f64,
    alpha_hat: f64,
    stagnated: bool,
}

/// Solves one block of `steps` grid steps below the current top.
///
/// `slices[l] = Z(ρ_0, ρ_0 − lΔ)`. On failure returns a message; the caller
/// decides whether to retry with a smaller block.
fn solve_block<T: Real>(
    slices: &[StateZ<T>],
    r_top: &DMatrix<T>,
    h: T,
    opts: &MarchOptions,
) -> std::result::Result<Block<T>, String> {
    let steps = slices.len() - 1;
    let weights: Vec<Vec<T>> =
        cumulative_weights(steps).into_iter().map(|row| row.into_iter().map(|w| lit::<T>(w) * -h).collect()).collect();
    let m = r_top.nrows();

    let base_q = q_function(&slices[0].j[1], &slices[0].j[2], &slices[0].j[3], &slices[0].y[0], &slices[0].y[1], &slices[0].y[2])
        .map_err(|e| e.to_string())?;
    let alpha_hat = to_f64(base_q.norm()) + 1.0;

    let mut z: Vec<Vec<StateZ<T>>> = slices.iter().map(|s| vec![s.clone(); steps + 1]).collect();
    let mut curv = vec![r_top.clone(); steps + 1];
    let mut prev_change: Option<f64> = None;
    let mut contraction: f64 = 0.0;
    let mut enforcement = 0.0;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let f: Vec<Vec<StateZ<T>>> =
            z.iter().map(|slice| slice.iter().zip(&curv).map(|(zi, ri)| rhs(zi, ri)).collect()).collect();
        let mut next: Vec<Vec<StateZ<T>>> = (0..=steps)
            .map(|l| {
                (0..=steps)
                    .map(|node| {
                        let mut acc = slices[l].clone();
                        for (i, w) in weights[node].iter().enumerate() {
                            if *w != T::zero() {
                                axpy(&mut acc, *w, &f[l][i]);
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        enforcement = 0.0;
        let mut next_curv = vec![r_top.clone()];
        for node in 1..=steps {
            let diag = &mut next[node][node];
            enforcement = f64::max(enforcement, to_f64(diag.j[0].amax()));
            diag.j[0] = DMatrix::zeros(m, m);
            next_curv.push(diag.diagonal_curvature().map_err(|e| format!("at node {node}: {e}"))?);
        }
        change = 0.0;
        for (a, b) in next_curv.iter().zip(&curv) {
            change = change.max(to_f64((a - b).amax()) / to_f64(b.amax()).max(1.0));
        }
        for (sa, sb) in next.iter().zip(&z) {
            for (a, b) in sa.iter().zip(sb) {
                change = change.max(to_f64(a.max_diff(b)) / to_f64(b.max_abs()).max(1.0));
            }
        }
        if !change.is_finite() || change > 1e6 {
            return Err(format!("fixed-point iteration diverged (relative change {change:e})"));
        }
        if let Some(p) = prev_change {
            if p > 10.0 * opts.tolerance && p > 0.0 {
                contraction = contraction.max(change / p);
            }
        }
        prev_change = Some(change);
        z = next;
        curv = next_curv;
        if change < opts.tolerance {
            break;
        }
    }
    let stagnated = change >= opts.tolerance;
    if stagnated && change >= opts.stagnation_factor * opts.tolerance {
        return Err(format!("no convergence after {iterations} iterations (relative change {change:e})"));
    }

    // propagators with the converged curvature, same quadrature
    let gens: Vec<DMatrix<T>> = curv.iter().map(jacobi_generator).collect();
    let eye = DMatrix::<T>::identity(2 * m, 2 * m);
    let mut u = vec![eye.clone(); steps + 1];
    for _ in 0..200 {
        let next: Vec<DMatrix<T>> = (0..=steps)
            .map(|node| {
                let mut acc = eye.clone();
                for (i, w) in weights[node].iter().enumerate() {
                    if *w != T::zero() {
                        acc += &gens[i] * &u[i] * *w;
                    }
                }
                acc
            })
            .collect();
        let diff = next.iter().zip(&u).map(|(a, b)| to_f64((a - b).amax())).fold(0.0, f64::max);
        let scale = next.iter().map(|a| to_f64(a.amax())).fold(1.0, f64::max);
        u = next;
        if diff <= 1e-15 * scale {
            break;
        }
    }
    Ok(Block { curvature: curv, propagators: u, iterations, contraction, enforcement, alpha_hat, stagnated })
}

/// `(j_0, y_0)` after applying a Jacobi propagator to `z`.
fn propagate_zero<T: Real>(phi: &DMatrix<T>, z: &StateZ<T>) -> (DMatrix<T>, DMatrix<T>) {
    let m = z.dim();
    let j = phi.view((0, 0), (m, m)) * &z.j[0] + phi.view((0, m), (m, m)) * &z.y[0];
    let y = phi.view((m, 0), (m, m)) * &z.j[0] + phi.view((m, m), (m, m)) * &z.y[0];
    (j, y)
}

/// Marches the reconstruction from `r = 0` down to `r = −T` and propagates
/// `Z(0, ·)` upward through `I0` with the curvature estimated there.
pub fn march_reconstruct<T: Real>(
    access: &DataAccess<T>,
    rmat_i0: &CurvatureCurve<T>,
    init: &InitialState<T>,
    opts: &MarchOptions,
) -> Result<ReconstructionResult<T>> {
    let grid = access.grid();
    let h = grid.step;
    let m = grid.dim - 1;
    let n_down = to_f64((grid.horizon / h).round()) as usize;
    let n_up = grid.half_width();
    let nt = grid.t_grid.len();
    if init.z.len() != nt {
        return Err(DixError::Dimension(format!("initial state has {} slices, data grid has {nt}", init.z.len())));
    }
    let r_nodes: Vec<T> = (0..=n_down + n_up).map(|i| -grid.horizon + h * lit::<T>(i as f64)).collect();
    let nr = r_nodes.len();
    let mut jmat = MatrixField::new(m, nr, nt);
    let mut ymat = MatrixField::new(m, nr, nt);
    // t = −k step sits at t-index n_down − k; r = −k step at r-index n_down − k
    let diag_t = |ir: usize| ir;
    let zero = DMatrix::<T>::zeros(m, m);

    let store = |jm: &mut MatrixField<T>, ym: &mut MatrixField<T>, ir: usize, column: Vec<(DMatrix<T>, DMatrix<T>)>| {
        for (it, (j, y)) in column.into_iter().enumerate() {
            if it == diag_t(ir) {
                jm.set(ir, it, &zero);
            } else {
                jm.set(ir, it, &j);
            }
            ym.set(ir, it, &y);
        }
    };

    store(&mut jmat, &mut ymat, n_down, init.z.iter().map(|z| (z.j[0].clone(), z.y[0].clone())).collect());
    for k in 1..=n_up {
        let phi = jacobi_solution_operator(rmat_i0, T::zero(), h * lit::<T>(k as f64))?;
        let column = init.z.par_iter().map(|z| propagate_zero(&phi, z)).collect();
        store(&mut jmat, &mut ymat, n_down + k, column);
    }

    let eps_steps = to_f64((grid.epsilon / h).round()) as usize;
    let min_steps = opts.min_steps.max(eps_steps / 64).max(1);
    let initial = opts.initial_steps.unwrap_or(eps_steps / 4).max(min_steps);

    let mut current = init.z.clone();
    let r0 = current[n_down].diagonal_curvature().map_err(|e| DixError::Solver {
        block: 0,
        r_lo: 0.0,
        r_hi: 0.0,
        message: format!("curvature at r = 0: {e}"),
    })?;
    let mut curvature = vec![r0]; // at r = −k step, k = 0..=n_down
    let mut blocks = Vec::new();
    let mut warnings = Vec::new();
    let mut k0 = 0;
    while k0 < n_down {
        let remaining = n_down - k0;
        let mut steps = initial.min(remaining);
        let mut halvings = 0;
        let block = loop {
            let slices: Vec<StateZ<T>> = (0..=steps).map(|l| current[n_down - k0 - l].clone()).collect();
            match solve_block(&slices, &curvature[k0], h, opts) {
                Ok(b) => break b,
                Err(message) => {
                    if steps <= min_steps {
                        let r_hi = -(k0 as f64) * to_f64(h);
                        return Err(DixError::Solver {
                            block: blocks.len(),
                            r_lo: r_hi - steps as f64 * to_f64(h),
                            r_hi,
                            message,
                        });
                    }
                    steps = (steps / 2).max(min_steps).min(remaining);
                    halvings += 1;
                }
            }
        };
        let r_top = -(k0 as f64) * to_f64(h);
        if block.stagnated {
            warnings.push(format!("block at r = {r_top} stagnated above the tolerance"));
        }
        blocks.push(BlockRecord {
            r_top,
            r_bottom: r_top - steps as f64 * to_f64(h),
            nodes: steps + 1,
            iterations: block.iterations,
            contraction: block.contraction,
            alpha_hat: block.alpha_hat,
            enforcement_residual: block.enforcement,
            halvings,
        });
        for node in 1..=steps {
            let ir = n_down - k0 - node;
            let column = current.par_iter().map(|z| propagate_zero(&block.propagators[node], z)).collect();
            store(&mut jmat, &mut ymat, ir, column);
        }
        let phi = &block.propagators[steps];
        current = current.par_iter().map(|z| z.propagate(phi)).collect();
        current[n_down - k0 - steps].j[0] = zero.clone();
        curvature.extend(block.curvature.into_iter().skip(1));
        k0 += steps;
    }
    curvature.reverse();
    let rmat_rec = UniformSeries::new(-grid.horizon, h, curvature);

    let max_contraction = blocks.iter().map(|b| b.contraction).fold(0.0, f64::max);
    let max_enforcement_residual = blocks.iter().map(|b| b.enforcement_residual).fold(0.0, f64::max);
    let mut result = ReconstructionResult {
        rmat_rec,
        rmat_i0: rmat_i0.clone(),
        r_nodes,
        t_grid: grid.t_grid.clone(),
        jmat,
        ymat,
        conjugates: vec![],
        diagnostics: Diagnostics {
            blocks,
            anchors: init.anchors.clone(),
            max_contraction,
            max_enforcement_residual,
            warnings,
            hygiene: None,
        },
    };
    result.conjugates = detect_conjugates(&result);
    Ok(result)
}
