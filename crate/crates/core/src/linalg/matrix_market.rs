//! Matrix Market (`.mtx`) import and export.
//!
//! Matrices use the `coordinate real general` format with 1-based indices;
//! vectors use `array real general` with a single column. Values are written
//! with 17 significant digits so a write/read round trip reproduces every
//! `f64` bitwise.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Writes `a` in coordinate format.
pub fn write_matrix<W: Write>(w: &mut W, a: &CsrMatrix) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (c, v) in cols.iter().zip(vals) {
            writeln!(w, "{} {} {:.17e}", i + 1, c + 1, v)?;
        }
    }
    Ok(())
}

/// Writes a vector in array format (one column).
pub fn write_vector<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} 1", v.len())?;
    for x in v {
        writeln!(w, "{x:.17e}")?;
    }
    Ok(())
}

/// Reads a matrix in coordinate format. Duplicate entries are summed.
pub fn read_matrix<R: BufRead>(r: &mut R) -> Result<CsrMatrix> {
    let mut lines = r.lines();
    let header =
        next_line(&mut lines)?.ok_or_else(|| Error::Parse("empty Matrix Market file".into()))?;
    let lowered = header.to_ascii_lowercase();
    if !lowered.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse(format!(
            "unsupported Matrix Market header: {header}"
        )));
    }
    let symmetric = lowered.contains("symmetric");
    let size =
        skip_comments(&mut lines)?.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims = parse_fields::<usize>(&size, 3)?;
    let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
    let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    for _ in 0..nnz {
        let line = skip_comments(&mut lines)?
            .ok_or_else(|| Error::Parse("truncated entry list".into()))?;
        let mut it = line.split_whitespace();
        let i: usize = parse_next(&mut it, &line)?;
        let j: usize = parse_next(&mut it, &line)?;
        let v: f64 = parse_next(&mut it, &line)?;
        if i == 0 || j == 0 || i > nrows || j > ncols {
            return Err(Error::Parse(format!("entry ({i}, {j}) out of range")));
        }
        triplets.push((i - 1, j - 1, v));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, v));
        }
    }
    CsrMatrix::from_triplets(nrows, ncols, &triplets)
}

/// Reads a one-column vector in array format.
pub fn read_vector<R: BufRead>(r: &mut R) -> Result<Vec<f64>> {
    let mut lines = r.lines();
    let header =
        next_line(&mut lines)?.ok_or_else(|| Error::Parse("empty Matrix Market file".into()))?;
    if !header
        .to_ascii_lowercase()
        .starts_with("%%matrixmarket matrix array real")
    {
        return Err(Error::Parse(format!(
            "unsupported Matrix Market header: {header}"
        )));
    }
    let size =
        skip_comments(&mut lines)?.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims = parse_fields::<usize>(&size, 2)?;
    if dims[1] != 1 {
        return Err(Error::Parse(format!(
            "expected a single column, got {}",
            dims[1]
        )));
    }
    let mut v = Vec::with_capacity(dims[0]);
    for _ in 0..dims[0] {
        let line =
            skip_comments(&mut lines)?.ok_or_else(|| Error::Parse("truncated vector".into()))?;
        v.push(
            line.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad value {line:?}: {e}")))?,
        );
    }
    Ok(v)
}

type Lines<'a, R> = std::io::Lines<&'a mut R>;

fn next_line<R: BufRead>(lines: &mut Lines<R>) -> Result<Option<String>> {
    match lines.next() {
        Some(l) => Ok(Some(l?)),
        None => Ok(None),
    }
}

fn skip_comments<R: BufRead>(lines: &mut Lines<R>) -> Result<Option<String>> {
    while let Some(line) = next_line(lines)? {
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('%') {
            return Ok(Some(line));
        }
    }
    Ok(None)
}

fn parse_fields<T: std::str::FromStr>(line: &str, want: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != want {
        return Err(Error::Parse(format!(
            "expected {want} fields, got {} in {line:?}",
            fields.len()
        )));
    }
    fields
        .into_iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|e| Error::Parse(format!("bad field {f:?}: {e}")))
        })
        .collect()
}

fn parse_next<'a, T: std::str::FromStr>(
    it: &mut impl Iterator<Item = &'a str>,
    line: &str,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    it.next()
        .ok_or_else(|| Error::Parse(format!("short entry line {line:?}")))?
        .parse::<T>()
        .map_err(|e| Error::Parse(format!("bad entry in {line:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_bitwise() {
        let a = CsrMatrix::from_triplets(
            3,
            2,
            &[
                (0, 0, 1.0 / 3.0),
                (1, 1, -std::f64::consts::E),
                (2, 0, 1e-300),
                (2, 1, 4.0),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        let b = read_matrix(&mut buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vector_round_trip_is_bitwise() {
        let v = vec![0.1, -7.25, 3.0_f64.sqrt(), 0.0];
        let mut buf = Vec::new();
        write_vector(&mut buf, &v).unwrap();
        let w = read_vector(&mut buf.as_slice()).unwrap();
        assert_eq!(v.len(), w.len());
        for (a, b) in v.iter().zip(&w) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn symmetric_storage_is_expanded() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n\
                    % comment\n\
                    2 2 2\n\
                    1 1 2.0\n\
                    2 1 -1.0\n";
        let a = read_matrix(&mut text.as_bytes()).unwrap();
        assert_eq!(a.get(0, 1), -1.0);
        assert_eq!(a.get(1, 0), -1.0);
    }

    #[test]
    fn bad_header_is_rejected() {
        let text = "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1.0\n";
        assert!(matches!(
            read_matrix(&mut text.as_bytes()),
            Err(Error::Parse(_))
        ));
    }
}
