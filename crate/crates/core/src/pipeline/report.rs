//! CSV tables and 8-bit PGM images.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Result};
use crate::grid::Grid;

/// A table cell: text or a number printed with six decimals.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(usize),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

pub fn format_csv(header: &[&str], rows: &[Vec<Cell>]) -> Result<String> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(invalid(format!("csv row has {} cells, header {}", row.len(), header.len())));
        }
        let cells: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Text(s) => s.clone(),
                Cell::Num(v) => format!("{v:.6}"),
                Cell::Int(v) => v.to_string(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    std::fs::write(path, format_csv(header, rows)?)?;
    Ok(())
}

/// Binary PGM of a `frames x channels` grid, transposed so that rows are
/// channels and columns are frames. Row 0 holds channel 0. Values map
/// linearly from `[min, max]` to `[0, 255]`; a constant grid maps to 0.
pub fn encode_pgm(grid: &Grid) -> (Vec<u8>, f64, f64) {
    let (frames, chans) = grid.shape();
    let lo = grid.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{frames} {chans}\n255\n").into_bytes();
    for c in 0..chans {
        for t in 0..frames {
            let v = if span > 0.0 { (grid.get(t, c) - lo) / span } else { 0.0 };
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    (out, lo, hi)
}

/// Writes `<path>` and the scaling sidecar `<path>.txt`.
pub fn write_pgm(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let path = path.as_ref();
    if grid.rows() == 0 || grid.cols() == 0 {
        return Err(invalid("cannot image an empty grid"));
    }
    let (bytes, lo, hi) = encode_pgm(grid);
    std::fs::write(path, bytes)?;
    let mut side = String::new();
    writeln!(side, "min {lo:.6}").expect("string write");
    writeln!(side, "max {hi:.6}").expect("string write");
    writeln!(side, "rows channel").expect("string write");
    writeln!(side, "cols frame").expect("string write");
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".txt");
    std::fs::write(sidecar, side)?;
    Ok(())
}
