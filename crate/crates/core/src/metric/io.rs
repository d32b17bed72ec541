use std::io::Write;

use super::NormalCoordinateMetric;
use crate::error::Result;
use crate::scalar::Real;

fn z_header(m: usize) -> String {
    (1..=m).map(|k| format!("z{k}")).collect::<Vec<_>>().join(",")
}

/// `z1,…,t,valid,g11,g12,…` with `nan` entries at focal points.
pub fn write_metric_csv<T: Real, W: Write>(metric: &NormalCoordinateMetric<T>, mut w: W) -> Result<()> {
    let m = metric.z.first().map_or(0, Vec::len);
    let n = m + 1;
    let entries: Vec<String> = (1..=n).flat_map(|i| (1..=n).map(move |j| format!("g{i}{j}"))).collect();
    writeln!(w, "{}{}t,valid,{}", z_header(m), if m > 0 { "," } else { "" }, entries.join(","))?;
    for (z, column) in metric.z.iter().zip(&metric.g) {
        let zs: String = z.iter().map(|c| format!("{c:.17e},")).collect();
        for (t, g) in metric.t_grid.iter().zip(column) {
            let values: Vec<String> = match g {
                Some(g) => (0..n).flat_map(|i| (0..n).map(move |j| format!("{:.17e}", g[(i, j)]))).collect(),
                None => vec!["nan".to_string(); n * n],
            };
            writeln!(w, "{zs}{t:.17e},{},{}", u8::from(g.is_some()), values.join(","))?;
        }
    }
    Ok(())
}

/// `z1,…,t` for every focal time.
pub fn write_focal_csv<T: Real, W: Write>(metric: &NormalCoordinateMetric<T>, mut w: W) -> Result<()> {
    let m = metric.z.first().map_or(0, Vec::len);
    writeln!(w, "{}{}t", z_header(m), if m > 0 { "," } else { "" })?;
    for (z, times) in metric.z.iter().zip(&metric.focal_sets) {
        let zs: String = z.iter().map(|c| format!("{c:.17e},")).collect();
        for t in times {
            writeln!(w, "{zs}{t:.17e}")?;
        }
    }
    Ok(())
}
