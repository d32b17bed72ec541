use nalgebra::DMatrix;

use super::access::DataAccess;
use super::condition_number;
use crate::error::{DixError, Result};
use crate::forward::CurvatureCurve;
use crate::numerics::{fornberg_weights, UniformSeries};
use crate::scalar::{lit, to_f64, Real};

/// Finite-difference rule for `∂_t³ k` at the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThirdDerivativeStencil {
    /// Five points `t = r, r − h, …, r − 4h`.
    OneSided5,
    /// The five-point rule at spacings `h` and `2h`, combined to cancel the
    /// leading `h²` error term.
    Richardson,
}

/// Curvature on `I0` estimated from the data.
#[derive(Debug, Clone)]
pub struct CurvatureEstimate<T: Real> {
    pub curve: CurvatureCurve<T>,
    pub warnings: Vec<String>,
}

/// Condition number of `s` above which its inversion is flagged.
const ILL_CONDITIONED: f64 = 1e8;

fn one_sided<T: Real>(access: &DataAccess<T>, r: T, spacing: usize, warnings: &mut Vec<String>) -> Result<DMatrix<T>> {
    let h = access.step() * lit::<T>(spacing as f64);
    let nodes: Vec<T> = (0..5).map(|m| r - h * lit::<T>(m as f64)).collect();
    let w = fornberg_weights(r, &nodes, 3);
    let mut d3: Option<DMatrix<T>> = None;
    for (m, t) in nodes.iter().enumerate().skip(1) {
        let s = access.s(r, *t)?.ok_or_else(|| {
            DixError::Config(format!(
                "curvature estimate at r = {} needs s(r, {}), which is missing or invalid",
                to_f64(r),
                to_f64(*t)
            ))
        })?;
        if to_f64(condition_number(s)) > ILL_CONDITIONED {
            warnings.push(format!("ill-conditioned shape operator at r = {}, t = {}", to_f64(r), to_f64(*t)));
        }
        let k = s.clone().try_inverse().ok_or_else(|| {
            DixError::Config(format!("shape operator at r = {}, t = {} is singular", to_f64(r), to_f64(*t)))
        })?;
        let term = k * w[3][m];
        d3 = Some(match d3 {
            Some(acc) => acc + term,
            None => term,
        });
    }
    // k(r, r) = 0 contributes nothing
    Ok(d3.expect("four off-diagonal nodes"))
}

/// `rmat(r) = −½ ∂_t³ k(r, t)|_{t = r}` at every `r` of the data grid, with
/// `k = s⁻¹` continued by `k(r, r) = 0`.
pub fn estimate_curvature_on_i0<T: Real>(
    access: &DataAccess<T>,
    stencil: ThirdDerivativeStencil,
) -> Result<CurvatureEstimate<T>> {
    let r_grid = access.r_grid().to_vec();
    if r_grid.len() < 2 {
        return Err(DixError::Config("data grid has fewer than two r samples".into()));
    }
    let mut warnings = Vec::new();
    let mut values = Vec::with_capacity(r_grid.len());
    let half: T = lit(-0.5);
    for &r in &r_grid {
        let d3 = match stencil {
            ThirdDerivativeStencil::OneSided5 => one_sided(access, r, 1, &mut warnings)?,
            ThirdDerivativeStencil::Richardson => {
                let fine = one_sided(access, r, 1, &mut warnings)?;
                let coarse = one_sided(access, r, 2, &mut warnings)?;
                (fine * lit::<T>(4.0) - coarse) / lit::<T>(3.0)
            }
        };
        values.push(d3 * half);
    }
    warnings.dedup();
    Ok(CurvatureEstimate { curve: UniformSeries::new(r_grid[0], access.step(), values), warnings })
}

/// Width of the `r` stencil of [`estimate_curvature_riccati`].
const RICCATI_POINTS: usize = 11;

/// `rmat(r) = −∂_r s(r, t) − s(r, t)²` on the `t` column where the data is
/// smallest.
///
/// Far from the diagonal `s` is smooth in `r`, so this is much more accurate
/// than differentiating `k` three times at the diagonal.
pub fn estimate_curvature_riccati<T: Real>(access: &DataAccess<T>) -> Result<CurvatureEstimate<T>> {
    let r_grid = access.r_grid().to_vec();
    if r_grid.len() < RICCATI_POINTS {
        return Err(DixError::Config(format!("the Riccati estimate needs at least {RICCATI_POINTS} r samples")));
    }
    let mut best: Option<(f64, T)> = None;
    for &t in access.t_grid() {
        let mut worst = 0.0;
        for &r in &r_grid {
            match access.s(r, t)? {
                Some(s) => worst = f64::max(worst, to_f64(s.norm())),
                None => {
                    worst = f64::INFINITY;
                    break;
                }
            }
        }
        if worst.is_finite() && best.is_none_or(|(b, _)| worst < b) {
            best = Some((worst, t));
        }
    }
    let Some((_, t)) = best else {
        return Err(DixError::Config("no t column of the data is valid across all of I0".into()));
    };
    let column: Vec<&DMatrix<T>> =
        r_grid.iter().map(|&r| access.s(r, t).map(|s| s.expect("column checked valid"))).collect::<Result<_>>()?;
    let values = (0..r_grid.len())
        .map(|i| {
            let window = crate::numerics::centered_window(i, RICCATI_POINTS, r_grid.len());
            let w = fornberg_weights(r_grid[i], &r_grid[window.clone()], 1);
            let mut ds = DMatrix::zeros(column[i].nrows(), column[i].ncols());
            for (k, idx) in window.enumerate() {
                ds += column[idx] * w[1][k];
            }
            -(ds + column[i] * column[i])
        })
        .collect();
    Ok(CurvatureEstimate {
        curve: UniformSeries::new(r_grid[0], access.step(), values),
        warnings: vec![],
    })
}
