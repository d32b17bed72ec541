use std::io::{BufRead, Write};

use super::Diagnostics;
use crate::error::{DixError, Result};
use crate::forward::{read_curve_csv, write_curve_csv, CurvatureCurve};
use crate::scalar::Real;

/// Recovered curvature as `t,r11,r12,…` rows.
pub fn write_rmat_csv<T: Real, W: Write>(curve: &CurvatureCurve<T>, w: W) -> Result<()> {
    write_curve_csv(curve, w)
}

/// Reads a curve written by [`write_rmat_csv`].
pub fn read_result_curve<T: Real, R: BufRead>(r: R) -> Result<CurvatureCurve<T>> {
    read_curve_csv(r)
}

pub fn write_conjugates_csv<T: Real, W: Write>(pairs: &[(T, T)], mut w: W) -> Result<()> {
    writeln!(w, "r,t")?;
    for (r, t) in pairs {
        writeln!(w, "{r:.17e},{t:.17e}")?;
    }
    Ok(())
}

pub fn write_diagnostics_json<W: Write>(diagnostics: &Diagnostics, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, diagnostics).map_err(|e| DixError::Io(e.to_string()))
}

/// Reads pairs written by [`write_conjugates_csv`].
pub fn read_conjugates_csv<T: Real, R: BufRead>(r: R) -> Result<Vec<(T, T)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || DixError::Parse { line: i + 1, message: format!("expected 'r,t', found '{line}'") };
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        let a = a.trim().parse::<T>().map_err(|_| bad())?;
        let b = b.trim().parse::<T>().map_err(|_| bad())?;
        out.push((a, b));
    }
    Ok(out)
}
