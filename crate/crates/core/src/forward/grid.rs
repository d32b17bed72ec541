use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{frame_curvature, jacobi_matrix, shape_matrix, CurvatureCurve, JacobiPair};
use crate::catalog::FinslerChart;
use crate::error::{DixError, Result};
use crate::geodesic::{uniform_grid, GeodesicFrame};
use crate::numerics::{centered_window, fornberg_weights, UniformSeries};
use crate::scalar::{abs, lit, to_f64, Real};

/// Shape operators `s(r, t)` of geodesic spheres sampled on `I0 × I1`, with
/// `I0 = (−ε, ε)` and `I1 = [−T, ε)`, both uniform with spacing `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereDataGrid<T: Real> {
    /// Dimension of the manifold; matrices are `(n−1)×(n−1)`.
    pub dim: usize,
    pub epsilon: T,
    pub horizon: T,
    pub step: T,
    pub r_grid: Vec<T>,
    pub t_grid: Vec<T>,
    /// `cells[it * r_grid.len() + ir]`; `None` marks an invalid cell.
    pub cells: Vec<Option<DMatrix<T>>>,
}

impl<T: Real> SphereDataGrid<T> {
    pub fn r_count(&self) -> usize {
        self.r_grid.len()
    }

    pub fn t_count(&self) -> usize {
        self.t_grid.len()
    }

    pub fn cell(&self, ir: usize, it: usize) -> Option<&DMatrix<T>> {
        self.cells[it * self.r_grid.len() + ir].as_ref()
    }

    pub fn valid(&self, ir: usize, it: usize) -> bool {
        self.cell(ir, it).is_some()
    }

    fn index_in(grid: &[T], step: T, x: T) -> Option<usize> {
        let k = to_f64(((x - grid[0]) / step).round());
        if k < 0.0 || k as usize >= grid.len() {
            return None;
        }
        let i = k as usize;
        (abs(grid[i] - x) <= step * lit(1e-6)).then_some(i)
    }

    pub fn r_index(&self, r: T) -> Option<usize> {
        Self::index_in(&self.r_grid, self.step, r)
    }

    pub fn t_index(&self, t: T) -> Option<usize> {
        Self::index_in(&self.t_grid, self.step, t)
    }

    /// Number of grid steps from `r = 0` to the edge of `r_grid`.
    pub fn half_width(&self) -> usize {
        self.r_grid.len() / 2
    }
}

/// Everything the forward model produces for one geodesic: the data grid
/// plus the ground truth it was computed from.
#[derive(Debug, Clone)]
pub struct ForwardData<T: Real> {
    pub grid: SphereDataGrid<T>,
    /// Curvature matrix along the whole geodesic (truth; never part of the data).
    pub curve: CurvatureCurve<T>,
    /// `jacobi[it][ir]` = `(j, y)(r_grid[ir], t_grid[it])`.
    pub jacobi: Vec<Vec<JacobiPair<T>>>,
    pub warnings: Vec<String>,
}

fn is_multiple<T: Real>(x: T, step: T) -> bool {
    let q = x / step;
    abs(q - q.round()) < lit(1e-6)
}

fn validate<T: Real>(epsilon: T, horizon: T, step: T) -> Result<()> {
    if !(epsilon > T::zero() && step > T::zero()) {
        return Err(DixError::Config("epsilon and grid step must be positive".into()));
    }
    if epsilon >= horizon {
        return Err(DixError::Config(format!("epsilon = {epsilon} must be smaller than the horizon T = {horizon}")));
    }
    if step > epsilon / lit(8.0) {
        return Err(DixError::Config(format!("grid step {step} exceeds epsilon/8 = {}", epsilon / lit(8.0))));
    }
    if T::one() / step < lit(9.0) {
        return Err(DixError::Config(format!("grid step {step} gives fewer than 9 samples per unit time")));
    }
    if !is_multiple(epsilon, step) || !is_multiple(horizon, step) {
        return Err(DixError::Config("epsilon and horizon must be integer multiples of the grid step".into()));
    }
    Ok(())
}

/// Fills the shape-operator grid from a known curvature curve.
pub fn synthesize_from_curve<T: Real>(
    curve: CurvatureCurve<T>,
    dim: usize,
    epsilon: T,
    horizon: T,
    step: T,
) -> Result<ForwardData<T>> {
    validate(epsilon, horizon, step)?;
    let half = to_f64((epsilon / step).round()) as i64;
    let r_grid: Vec<T> = (1 - half..half).map(|k| step * lit::<T>(k as f64)).collect();
    let t_grid = uniform_grid(-horizon, epsilon - step * lit(0.5), step);
    let jacobi = t_grid
        .par_iter()
        .map(|&t| jacobi_matrix(&curve, t, &r_grid))
        .collect::<Result<Vec<_>>>()?;
    let cells = jacobi.iter().flat_map(|col| col.iter().map(shape_matrix)).collect();
    let grid = SphereDataGrid { dim, epsilon, horizon, step, r_grid, t_grid, cells };
    Ok(ForwardData { grid, curve, jacobi, warnings: vec![] })
}

/// Synthesizes the sphere data along `frame`, which must cover `[−T, ε]`.
pub fn synthesize_sphere_data<T: Real>(
    chart: &dyn FinslerChart<T>,
    frame: &GeodesicFrame<T>,
    epsilon: T,
    horizon: T,
    step: T,
) -> Result<ForwardData<T>> {
    validate(epsilon, horizon, step)?;
    if !frame.covers(-horizon, epsilon) {
        return Err(DixError::Domain(format!(
            "geodesic samples cover [{}, {}] but [{}, {}] is needed{}",
            frame.times.first().copied().unwrap_or(T::zero()),
            frame.times.last().copied().unwrap_or(T::zero()),
            -horizon,
            epsilon,
            if frame.truncated() { " (the geodesic left the chart)" } else { "" }
        )));
    }
    let (curve, warnings) = frame_curvature(chart, frame)?;
    let mut data = synthesize_from_curve(curve, chart.dim(), epsilon, horizon, step)?;
    data.warnings = warnings;
    Ok(data)
}

/// Stencil width of the `∂_r s` estimate in [`riccati_residual`].
pub const RICCATI_STENCIL: usize = 9;

/// `‖∂_r s + s² + rmat(r)‖` at grid cell `(ir, it)`, with `∂_r s` from a
/// nine-point stencil along `r`. `None` if a stencil cell is invalid.
pub fn riccati_residual<T: Real>(grid: &SphereDataGrid<T>, curve: &CurvatureCurve<T>, ir: usize, it: usize) -> Option<T> {
    let s = grid.cell(ir, it)?;
    let window = centered_window(ir, RICCATI_STENCIL, grid.r_count());
    if window.len() < RICCATI_STENCIL {
        return None;
    }
    let nodes: Vec<T> = grid.r_grid[window.clone()].to_vec();
    let w = fornberg_weights(grid.r_grid[ir], &nodes, 1);
    let mut ds = DMatrix::zeros(s.nrows(), s.ncols());
    for (k, i) in window.enumerate() {
        ds += grid.cell(i, it)? * w[1][k];
    }
    let r = grid.r_grid[ir];
    Some((ds + s * s + curve.at(r)).norm())
}

fn parse_err(line: usize, message: impl Into<String>) -> DixError {
    DixError::Parse { line, message: message.into() }
}

/// Writes the grid with a header block followed by one row per cell:
/// `r, t, valid, s entries row-major` (`nan` entries for invalid cells).
pub fn write_grid_csv<T: Real, W: Write>(grid: &SphereDataGrid<T>, mut w: W) -> Result<()> {
    let m = grid.dim - 1;
    writeln!(w, "# sphere-data")?;
    writeln!(w, "# n,{}", grid.dim)?;
    writeln!(w, "# epsilon,{}", grid.epsilon)?;
    writeln!(w, "# horizon,{}", grid.horizon)?;
    writeln!(w, "# step,{}", grid.step)?;
    writeln!(w, "# r_count,{}", grid.r_count())?;
    writeln!(w, "# t_count,{}", grid.t_count())?;
    let mut header = vec!["r".to_string(), "t".to_string(), "valid".to_string()];
    for a in 1..=m {
        header.extend((1..=m).map(|b| format!("s{a}{b}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for (it, t) in grid.t_grid.iter().enumerate() {
        for (ir, r) in grid.r_grid.iter().enumerate() {
            let mut row = vec![r.to_string(), t.to_string()];
            match grid.cell(ir, it) {
                Some(s) => {
                    row.push("1".into());
                    for a in 0..m {
                        row.extend((0..m).map(|b| s[(a, b)].to_string()));
                    }
                }
                None => {
                    row.push("0".into());
                    row.extend(std::iter::repeat_n("nan".to_string(), m * m));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn read_grid_csv<T: Real, R: BufRead>(r: R) -> Result<SphereDataGrid<T>> {
    let mut header: std::collections::HashMap<String, String> = Default::default();
    let mut rows: Vec<(usize, String)> = Vec::new();
    let mut last_line = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        last_line = i + 1;
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once(',') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with("r,") {
            continue;
        }
        rows.push((i + 1, line));
    }
    let get = |key: &str| -> Result<&String> {
        header.get(key).ok_or_else(|| parse_err(0, format!("missing header field '{key}'")))
    };
    let num = |key: &str| -> Result<T> {
        get(key)?.parse::<T>().map_err(|_| parse_err(0, format!("bad header value for '{key}'")))
    };
    let count = |key: &str| -> Result<usize> {
        get(key)?.parse::<usize>().map_err(|_| parse_err(0, format!("bad header value for '{key}'")))
    };
    let dim = count("n")?;
    if dim < 2 {
        return Err(parse_err(0, "dimension must be at least 2"));
    }
    let (epsilon, horizon, step) = (num("epsilon")?, num("horizon")?, num("step")?);
    let (nr, nt) = (count("r_count")?, count("t_count")?);
    let m = dim - 1;
    if rows.len() < nr * nt {
        return Err(parse_err(
            last_line + 1,
            format!("grid truncated: expected {} data rows, found {} (row {} missing)", nr * nt, rows.len(), rows.len() + 1),
        ));
    }
    if rows.len() > nr * nt {
        return Err(parse_err(rows[nr * nt].0, "more data rows than the header declares"));
    }
    let mut r_grid = Vec::with_capacity(nr);
    let mut t_grid = Vec::with_capacity(nt);
    let mut cells = Vec::with_capacity(nr * nt);
    for (k, (line_no, line)) in rows.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 + m * m {
            return Err(parse_err(*line_no, format!("expected {} fields, found {}", 3 + m * m, fields.len())));
        }
        let parse = |s: &str| s.parse::<T>().map_err(|_| parse_err(*line_no, format!("bad number '{s}'")));
        let (r, t) = (parse(fields[0])?, parse(fields[1])?);
        let (it, ir) = (k / nr, k % nr);
        if it == 0 {
            r_grid.push(r);
        } else if r != r_grid[ir] {
            return Err(parse_err(*line_no, "r value does not match the first t block"));
        }
        if ir == 0 {
            t_grid.push(t);
        } else if t != t_grid[it] {
            return Err(parse_err(*line_no, "t value changes inside a block"));
        }
        cells.push(match fields[2] {
            "1" => {
                let vals = fields[3..].iter().map(|s| parse(s)).collect::<Result<Vec<T>>>()?;
                Some(DMatrix::from_row_slice(m, m, &vals))
            }
            "0" => None,
            other => return Err(parse_err(*line_no, format!("bad validity flag '{other}'"))),
        });
    }
    Ok(SphereDataGrid { dim, epsilon, horizon, step, r_grid, t_grid, cells })
}

/// Writes a matrix curve as rows `t, entries row-major`.
pub fn write_curve_csv<T: Real, W: Write>(curve: &UniformSeries<T>, mut w: W) -> Result<()> {
    let m = curve.values[0].nrows();
    let mut header = vec!["t".to_string()];
    for a in 1..=m {
        header.extend((1..=m).map(|b| format!("r{a}{b}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, v) in curve.values.iter().enumerate() {
        let mut row = vec![curve.node(i).to_string()];
        for a in 0..m {
            row.extend((0..m).map(|b| v[(a, b)].to_string()));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_curve_csv<T: Real, R: BufRead>(r: R) -> Result<UniformSeries<T>> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut m = 0;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with('t') || line.starts_with('#') || line.trim().is_empty() {
            if line.starts_with('t') {
                let cols = line.split(',').count() - 1;
                m = (1..=4).find(|k| k * k == cols).ok_or_else(|| parse_err(i + 1, "bad column count"))?;
            }
            continue;
        }
        if m == 0 {
            return Err(parse_err(i + 1, "data row before header"));
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<T>().map_err(|_| parse_err(i + 1, format!("bad number '{s}'"))))
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != 1 + m * m {
            return Err(parse_err(i + 1, format!("expected {} fields", 1 + m * m)));
        }
        times.push(vals[0]);
        values.push(DMatrix::from_row_slice(m, m, &vals[1..]));
    }
    if times.len() < 2 {
        return Err(parse_err(0, "curve needs at least two rows"));
    }
    let step = (times[times.len() - 1] - times[0]) / lit::<T>((times.len() - 1) as f64);
    Ok(UniformSeries::new(times[0], step, values))
}
