//! Compressed sparse row matrices.

use crate::error::{Error, Result};

/// Sparse matrix in CSR form with sorted, duplicate-free column indices in
/// every row.
///
/// Equality (`PartialEq`) is structural and bitwise on the stored values,
/// which makes it suitable for the exact-symmetry and exact-extraction checks
/// used in the tests.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, validating the structural
    /// invariants (monotone offsets, in-range and strictly increasing column
    /// indices per row).
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 {
            return Err(Error::InvalidMatrix(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                nrows + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != col_indices.len() {
            return Err(Error::InvalidMatrix(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::InvalidMatrix(format!(
                "{} column indices but {} values",
                col_indices.len(),
                values.len()
            )));
        }
        for i in 0..nrows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::InvalidMatrix(format!(
                    "row_offsets decrease at row {i}"
                )));
            }
            let mut prev: Option<usize> = None;
            for &c in &col_indices[lo..hi] {
                if c >= ncols {
                    return Err(Error::InvalidMatrix(format!(
                        "column index {c} out of range in row {i} (ncols = {ncols})"
                    )));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(Error::InvalidMatrix(format!(
                            "column indices not strictly increasing in row {i}"
                        )));
                    }
                }
                prev = Some(c);
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed
    /// in insertion order, so repeated assembly of the same triplet list is
    /// bitwise reproducible. Explicit zeros are kept.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidMatrix(format!(
                    "triplet ({r}, {c}) out of range for {nrows}x{ncols} matrix"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        // Stable sort: duplicates stay in insertion order and are summed in
        // that order below.
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] = col_indices.len();
                last = Some((r, c));
            }
        }
        // Offsets of empty rows are still zero; make the sequence monotone.
        for i in 1..=nrows {
            row_offsets[i] = row_offsets[i].max(row_offsets[i - 1]);
        }
        Self::from_parts(nrows, ncols, row_offsets, col_indices, values)
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Entry `(i, j)`, zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`. Panics on dimension mismatch.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "spmv: x has wrong length");
        assert_eq!(y.len(), self.nrows, "spmv: y has wrong length");
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[i] = acc;
        }
    }

    /// `A x` into a fresh vector.
    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        y
    }

    /// `y = A (mask .* x)`: multiply after zeroing the entries of `x` whose
    /// mask is false. Skipped entries contribute no floating-point operation,
    /// so the result is identical whether a column is masked or `x` is zero
    /// there was never stored.
    pub fn spmv_masked_into(&self, x: &[f64], mask: &[bool], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "spmv_masked: x has wrong length");
        assert_eq!(mask.len(), self.ncols, "spmv_masked: mask has wrong length");
        assert_eq!(y.len(), self.nrows, "spmv_masked: y has wrong length");
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                if mask[*c] {
                    acc += v * x[*c];
                }
            }
            y[i] = acc;
        }
    }

    /// Transpose, with rows rebuilt in sorted order.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for j in 1..=self.ncols {
            counts[j] += counts[j - 1];
        }
        let row_offsets = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let slot = next[*c];
                col_indices[slot] = i;
                values[slot] = *v;
                next[*c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Principal submatrix on the given strictly increasing global indices:
    /// `B[i][j] = A[idx[i]][idx[j]]`. Stored values are copied bitwise.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Result<CsrMatrix> {
        if self.nrows != self.ncols {
            return Err(Error::InvalidMatrix(
                "principal_submatrix requires a square matrix".into(),
            ));
        }
        for w in idx.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidMatrix(
                    "submatrix indices must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = idx.last() {
            if last >= self.ncols {
                return Err(Error::InvalidMatrix(format!(
                    "submatrix index {last} out of range (n = {})",
                    self.ncols
                )));
            }
        }
        let mut local_of = vec![usize::MAX; self.ncols];
        for (l, &g) in idx.iter().enumerate() {
            local_of[g] = l;
        }
        let m = idx.len();
        let mut row_offsets = Vec::with_capacity(m + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for &g in idx {
            let (cols, vals) = self.row(g);
            for (c, v) in cols.iter().zip(vals) {
                let l = local_of[*c];
                if l != usize::MAX {
                    col_indices.push(l);
                    values.push(*v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(CsrMatrix {
            nrows: m,
            ncols: m,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Sparse matrix product `A * B`.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::InvalidMatrix(format!(
                "matmul: inner dimensions {} and {} differ",
                self.ncols, other.nrows
            )));
        }
        let n = other.ncols;
        let mut acc = vec![0.0f64; n];
        let mut marked = vec![false; n];
        let mut pattern: Vec<usize> = Vec::new();

        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            pattern.clear();
            let (cols, vals) = self.row(i);
            for (k, v) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(*k);
                for (c, bv) in bcols.iter().zip(bvals) {
                    if !marked[*c] {
                        marked[*c] = true;
                        pattern.push(*c);
                        acc[*c] = 0.0;
                    }
                    acc[*c] += v * bv;
                }
            }
            pattern.sort_unstable();
            for &c in &pattern {
                col_indices.push(c);
                values.push(acc[c]);
                marked[c] = false;
            }
            row_offsets.push(col_indices.len());
        }
        CsrMatrix::from_parts(self.nrows, n, row_offsets, col_indices, values)
    }

    /// True if the matrix equals its transpose exactly (same sparsity pattern
    /// and bitwise-equal values).
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && *self == self.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CsrMatrix {
        // [2 -1  0]
        // [-1 2 -1]
        // [0 -1  2]
        CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.5), (1, 1, -1.0)]).unwrap();
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.get(1, 1), -1.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn from_parts_rejects_unsorted_columns() {
        let err = CsrMatrix::from_parts(1, 3, vec![0, 2], vec![2, 0], vec![1.0, 1.0]);
        assert!(matches!(err, Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn from_parts_rejects_out_of_range_column() {
        let err = CsrMatrix::from_parts(1, 2, vec![0, 1], vec![5], vec![1.0]);
        assert!(matches!(err, Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn spmv_matches_manual_product() {
        let a = small();
        let y = a.spmv(&[1.0, 2.0, 3.0]);
        assert_eq!(y, vec![0.0, 0.0, 4.0]);
    }

    #[test]
    fn masked_spmv_zeroes_masked_columns() {
        let a = small();
        let mut y = vec![0.0; 3];
        a.spmv_masked_into(&[1.0, 2.0, 3.0], &[true, false, true], &mut y);
        assert_eq!(y, vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn transpose_twice_is_identity_operation() {
        let a = small();
        assert_eq!(a.transpose().transpose(), a);
        assert!(a.is_symmetric());
    }

    #[test]
    fn submatrix_extracts_bitwise() {
        let a = small();
        let b = a.principal_submatrix(&[0, 2]).unwrap();
        assert_eq!(b.nrows(), 2);
        assert_eq!(b.get(0, 0), 2.0);
        assert_eq!(b.get(0, 1), 0.0);
        assert_eq!(b.get(1, 1), 2.0);
        assert_eq!(b.nnz(), 2); // the off-diagonal zeros were never stored
    }

    #[test]
    fn matmul_against_identity() {
        let a = small();
        let i = CsrMatrix::identity(3);
        assert_eq!(a.matmul(&i).unwrap(), a);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }
}
