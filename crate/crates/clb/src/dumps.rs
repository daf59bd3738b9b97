//! Plain-text matrix grids for external plotting: a `rows cols` header
//! line, then one whitespace-separated row per line. Values are printed
//! shortest-round-trip, so re-reading a grid reproduces it exactly.

use std::fs;
use std::path::Path;

use crate::error::{ClbError, Result};

pub fn format_grid(grid: &[Vec<f64>]) -> String {
    let rows = grid.len();
    let cols = grid.first().map_or(0, |r| r.len());
    let mut out = format!("{rows} {cols}\n");
    for row in grid {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_grid(grid: &[Vec<f64>], path: &Path) -> Result<()> {
    fs::write(path, format_grid(grid)).map_err(|e| ClbError::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| ClbError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ClbError::parse(path, 1, "empty grid file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| ClbError::parse(path, 1, "bad grid header"))?;
    if dims.len() != 2 {
        return Err(ClbError::parse(path, 1, "grid header must be `rows cols`"));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let mut grid = Vec::with_capacity(rows);
    for (ln, line) in lines.take(rows) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ClbError::parse(path, ln + 1, "bad grid value"))?;
        if row.len() != cols {
            return Err(ClbError::parse(
                path,
                ln + 1,
                format!("expected {cols} values, got {}", row.len()),
            ));
        }
        grid.push(row);
    }
    if grid.len() != rows {
        return Err(ClbError::Schema(format!(
            "{}: header promises {rows} rows, file holds {}",
            path.display(),
            grid.len()
        )));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_roundtrip_is_exact() {
        let grid = vec![
            vec![0.1, -2.5, 1.0 / 3.0],
            vec![f64::MIN_POSITIVE, 0.0, 42.0],
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_grid(&grid, f.path()).unwrap();
        let back = read_grid(f.path()).unwrap();
        assert_eq!(grid, back);
    }

    #[test]
    fn short_files_are_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "2 2\n1.0 2.0\n").unwrap();
        assert!(read_grid(f.path()).is_err());
    }
}
