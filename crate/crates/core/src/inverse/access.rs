use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{DixError, Result};
use crate::forward::SphereDataGrid;
use crate::scalar::{abs, to_f64, Real};

/// Read-only view of the data grid that audits every access.
///
/// Reads are addressed by `(r, t)` coordinates; any request with `r ∉ I0`
/// (or off the sampling grid) is counted as a violation and, in strict mode,
/// rejected.
#[derive(Debug)]
pub struct DataAccess<'a, T: Real> {
    grid: &'a SphereDataGrid<T>,
    strict: bool,
    reads: AtomicUsize,
    violations: AtomicUsize,
}

/// Access counts collected by a [`DataAccess`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HygieneReport {
    pub strict: bool,
    pub reads: usize,
    pub violations: usize,
}

impl<'a, T: Real> DataAccess<'a, T> {
    pub fn new(grid: &'a SphereDataGrid<T>, strict: bool) -> Self {
        Self { grid, strict, reads: AtomicUsize::new(0), violations: AtomicUsize::new(0) }
    }

    pub fn grid(&self) -> &SphereDataGrid<T> {
        self.grid
    }

    pub fn epsilon(&self) -> T {
        self.grid.epsilon
    }

    pub fn step(&self) -> T {
        self.grid.step
    }

    pub fn r_grid(&self) -> &[T] {
        &self.grid.r_grid
    }

    pub fn t_grid(&self) -> &[T] {
        &self.grid.t_grid
    }

    /// Shape operator `s(r, t)`; `Ok(None)` for an invalid cell or a `t`
    /// outside the grid.
    pub fn s(&self, r: T, t: T) -> Result<Option<&DMatrix<T>>> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let ir = if abs(r) < self.grid.epsilon { self.grid.r_index(r) } else { None };
        let Some(ir) = ir else {
            self.violations.fetch_add(1, Ordering::Relaxed);
            if self.strict {
                return Err(DixError::Hygiene(format!(
                    "read of s(r = {}, t = {}) outside the measurement interval |r| < {}",
                    to_f64(r),
                    to_f64(t),
                    to_f64(self.grid.epsilon)
                )));
            }
            return Ok(None);
        };
        Ok(self.grid.t_index(t).and_then(|it| self.grid.cell(ir, it)))
    }

    pub fn report(&self) -> HygieneReport {
        HygieneReport {
            strict: self.strict,
            reads: self.reads.load(Ordering::Relaxed),
            violations: self.violations.load(Ordering::Relaxed),
        }
    }
}
