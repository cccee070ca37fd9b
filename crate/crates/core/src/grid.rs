//! Plain-text grid files.
//!
//! A header line `rows cols` followed by `rows` lines of `cols`
//! whitespace-separated decimal values. The first data row is the bottom
//! (`y = 0`) row of the grid; within a row `x` increases left to right.
//! Cell fields have `n_fine` rows, node fields `n_fine + 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

fn ingest(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_grid(path: &Path, text: &str) -> Result<Grid> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| ingest(path, 1, "missing header line"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(ingest(path, hline, "header must be `rows cols`"));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| ingest(path, hline, format!("bad dimension `{s}`")))
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;

    let mut values = Vec::with_capacity(rows * cols);
    let mut last_line = hline;
    for (lineno, line) in lines {
        last_line = lineno;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| ingest(path, lineno, format!("unparsable value `{tok}`")))?;
            if !v.is_finite() {
                return Err(ingest(path, lineno, format!("non-finite value `{tok}`")));
            }
            if values.len() == rows * cols {
                return Err(ingest(
                    path,
                    lineno,
                    format!("count mismatch: more than {} entries", rows * cols),
                ));
            }
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(ingest(
            path,
            last_line,
            format!(
                "count mismatch: expected {} entries, found {}",
                rows * cols,
                values.len()
            ),
        ));
    }
    Ok(Grid { rows, cols, values })
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_grid(path, &text)
}

pub fn format_grid(rows: usize, cols: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), rows * cols);
    let mut out = String::with_capacity(values.len() * 24);
    let _ = writeln!(out, "{rows} {cols}");
    for row in values.chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            // shortest representation that round-trips
            let _ = write!(out, "{v:e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_grid(path: impl AsRef<Path>, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_grid(rows, cols, values)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
