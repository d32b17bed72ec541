use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::GeodesicFrame;
use crate::error::{DixError, Result};
use crate::scalar::Real;

/// Writes `t, x1..xn, v1..vn, f{k}_{i}` rows, where `f{k}_{i}` is component
/// `i` of frame vector `k` (`f{n}` is the velocity).
pub fn write_frame_csv<T: Real, W: Write>(frame: &GeodesicFrame<T>, mut w: W) -> Result<()> {
    let n = frame.dim;
    writeln!(w, "# chart,{}", frame.chart_id)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("v{i}")));
    for k in 1..=n {
        header.extend((1..=n).map(|i| format!("f{k}_{i}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..frame.len() {
        let mut row = vec![frame.times[i].to_string()];
        row.extend(frame.positions[i].iter().map(|c| c.to_string()));
        row.extend(frame.velocities[i].iter().map(|c| c.to_string()));
        for k in 0..n {
            row.extend(frame.frames[i].column(k).iter().map(|c| c.to_string()));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_frame_csv<T: Real, R: BufRead>(r: R) -> Result<GeodesicFrame<T>> {
    let mut chart_id = String::new();
    let mut dim = 0usize;
    let mut frame = GeodesicFrame {
        chart_id: String::new(),
        dim: 0,
        times: vec![],
        positions: vec![],
        velocities: vec![],
        frames: vec![],
        backward_exit: None,
        forward_exit: None,
    };
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        if let Some(rest) = line.strip_prefix("# chart,") {
            chart_id = rest.trim().to_string();
            continue;
        }
        if line.starts_with('t') {
            let cols = line.split(',').count();
            dim = (1..=4).find(|n| 1 + 2 * n + n * n == cols).ok_or(DixError::Parse {
                line: line_no,
                message: format!("{cols} columns do not match any dimension"),
            })?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if dim == 0 {
            return Err(DixError::Parse { line: line_no, message: "data row before header".into() });
        }
        let vals = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|_| DixError::Parse { line: line_no, message: format!("bad number '{s}'") })
            })
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != 1 + 2 * dim + dim * dim {
            return Err(DixError::Parse { line: line_no, message: format!("expected {} fields", 1 + 2 * dim + dim * dim) });
        }
        frame.times.push(vals[0]);
        frame.positions.push(DVector::from_column_slice(&vals[1..1 + dim]));
        frame.velocities.push(DVector::from_column_slice(&vals[1 + dim..1 + 2 * dim]));
        frame.frames.push(DMatrix::from_column_slice(dim, dim, &vals[1 + 2 * dim..]));
    }
    frame.chart_id = chart_id;
    frame.dim = dim;
    Ok(frame)
}
