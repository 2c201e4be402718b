//! Sparse LU factorization for subdomain and coarse solves.
//!
//! The factorization is computed once per operator; solves against many
//! right-hand sides borrow the factors immutably and carry their own scratch
//! vector, so concurrent solves from several worker threads need no locking.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Relative pivot threshold: a pivot whose magnitude is at most this fraction
/// of the largest entry in its (eliminated) work row is treated as zero.
const PIVOT_REL_TOL: f64 = 1e-14;

/// Fill-reducing ordering applied before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LuOrdering {
    /// Factor in the natural row order.
    Natural,
    /// Reverse Cuthill-McKee on the symmetrized sparsity pattern. Default;
    /// effective for the banded operators produced by the grid partitioners.
    #[default]
    ReverseCuthillMcKee,
}

/// LU factors of a permuted matrix `P A P^T = L U`, with `L` unit lower
/// triangular.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    l_offsets: Vec<usize>,
    l_cols: Vec<usize>,
    l_vals: Vec<f64>,
    /// Strict upper part of `U` by rows; the diagonal is stored separately.
    u_offsets: Vec<usize>,
    u_cols: Vec<usize>,
    u_vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseLu {
    /// Factors a square matrix. Fails with [`Error::Singular`] when a pivot
    /// falls below the relative threshold.
    pub fn factor(a: &CsrMatrix, ordering: LuOrdering) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "LU factorization requires a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let perm = match ordering {
            LuOrdering::Natural => (0..n).collect::<Vec<_>>(),
            LuOrdering::ReverseCuthillMcKee => reverse_cuthill_mckee(a),
        };
        let mut pos_of = vec![0usize; n];
        for (k, &orig) in perm.iter().enumerate() {
            pos_of[orig] = k;
        }

        let mut lu = SparseLu {
            n,
            perm,
            l_offsets: Vec::with_capacity(n + 1),
            l_cols: Vec::new(),
            l_vals: Vec::new(),
            u_offsets: Vec::with_capacity(n + 1),
            u_cols: Vec::new(),
            u_vals: Vec::new(),
            diag: vec![0.0; n],
        };
        lu.l_offsets.push(0);
        lu.u_offsets.push(0);

        // Row-by-row (up-looking) elimination on the permuted matrix. `work`
        // is a dense scatter of the current row; `heap` yields the columns
        // left of the diagonal in elimination order, including fill-in.
        let mut work = vec![0.0f64; n];
        let mut marked = vec![false; n];
        let mut pattern: Vec<usize> = Vec::new();
        let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();

        for i in 0..lu.n {
            let orig_row = lu.perm[i];
            let (cols, vals) = a.row(orig_row);
            for (c, v) in cols.iter().zip(vals) {
                let pc = pos_of[*c];
                if !marked[pc] {
                    marked[pc] = true;
                    pattern.push(pc);
                    work[pc] = 0.0;
                    if pc < i {
                        heap.push(Reverse(pc));
                    }
                }
                work[pc] += v;
            }

            while let Some(Reverse(k)) = heap.pop() {
                let factor = work[k] / lu.diag[k];
                if factor != 0.0 {
                    // Subtract factor * (strict upper row k of U).
                    let (lo, hi) = (lu.u_offsets[k], lu.u_offsets[k + 1]);
                    for t in lo..hi {
                        let c = lu.u_cols[t];
                        if !marked[c] {
                            marked[c] = true;
                            pattern.push(c);
                            work[c] = 0.0;
                            if c < i {
                                heap.push(Reverse(c));
                            }
                        }
                        work[c] -= factor * lu.u_vals[t];
                    }
                    lu.l_cols.push(k);
                    lu.l_vals.push(factor);
                }
            }
            lu.l_offsets.push(lu.l_cols.len());

            let row_max = pattern.iter().fold(0.0f64, |m, &c| m.max(work[c].abs()));
            let pivot = if marked[i] { work[i] } else { 0.0 };
            if !pivot.is_finite() || pivot.abs() <= PIVOT_REL_TOL * row_max || row_max == 0.0 {
                return Err(Error::Singular {
                    row: orig_row,
                    pivot,
                });
            }
            lu.diag[i] = pivot;

            pattern.sort_unstable();
            for &c in &pattern {
                if c > i {
                    lu.u_cols.push(c);
                    lu.u_vals.push(work[c]);
                }
                marked[c] = false;
            }
            lu.u_offsets.push(lu.u_cols.len());
            pattern.clear();
        }
        Ok(lu)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` into `x`, using `scratch` as workspace. Both are
    /// resized as needed. `&self` is never mutated, so any number of threads
    /// may solve concurrently with their own scratch buffers.
    pub fn solve_into(&self, b: &[f64], x: &mut Vec<f64>, scratch: &mut Vec<f64>) {
        assert_eq!(b.len(), self.n, "solve: rhs has wrong length");
        scratch.resize(self.n, 0.0);
        x.resize(self.n, 0.0);
        let y = scratch;
        // y = P b, then forward substitution L y' = y in place.
        for k in 0..self.n {
            y[k] = b[self.perm[k]];
        }
        for i in 0..self.n {
            let (lo, hi) = (self.l_offsets[i], self.l_offsets[i + 1]);
            let mut acc = y[i];
            for t in lo..hi {
                acc -= self.l_vals[t] * y[self.l_cols[t]];
            }
            y[i] = acc;
        }
        // Backward substitution U x' = y', then x = P^T x'.
        for i in (0..self.n).rev() {
            let (lo, hi) = (self.u_offsets[i], self.u_offsets[i + 1]);
            let mut acc = y[i];
            for t in lo..hi {
                acc -= self.u_vals[t] * y[self.u_cols[t]];
            }
            y[i] = acc / self.diag[i];
        }
        for k in 0..self.n {
            x[self.perm[k]] = y[k];
        }
    }

    /// Convenience allocating solve.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Vec::new();
        let mut scratch = Vec::new();
        self.solve_into(b, &mut x, &mut scratch);
        x
    }

    /// Number of stored factor entries (L + U + diagonal), a proxy for fill.
    pub fn factor_nnz(&self) -> usize {
        self.l_vals.len() + self.u_vals.len() + self.n
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern of `a`.
///
/// Returns `perm` with `perm[k]` = original index of the vertex visited
/// `k`-th, reversed. Each connected component is started from a
/// pseudo-peripheral vertex found by repeated breadth-first sweeps.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    // Symmetrize the adjacency so the ordering works for structurally
    // unsymmetric inputs as well.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, _) = a.row(i);
        for &c in cols {
            if c != i {
                adj[i].push(c);
                adj[c].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut component: Vec<usize> = Vec::new();

    for start in 0..n {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(start, &adj, &degree);
        component.clear();
        component.push(root);
        visited[root] = true;
        let mut head = 0;
        while head < component.len() {
            let v = component[head];
            head += 1;
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                if !visited[u] {
                    visited[u] = true;
                    component.push(u);
                }
            }
        }
        order.extend_from_slice(&component);
    }
    order.reverse();
    order
}

/// Pseudo-peripheral vertex of the component containing `start`: repeatedly
/// take a lowest-degree vertex of the last BFS level until the eccentricity
/// stops growing.
fn pseudo_peripheral(start: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut root = start;
    let mut last_depth = 0usize;
    loop {
        let (levels, depth) = bfs_levels(root, adj);
        if depth <= last_depth && last_depth > 0 {
            return root;
        }
        last_depth = depth;
        let candidate = levels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == Some(depth))
            .map(|(v, _)| v)
            .min_by_key(|&v| (degree[v], v));
        match candidate {
            Some(c) if c != root => root = c,
            _ => return root,
        }
    }
}

fn bfs_levels(root: usize, adj: &[Vec<usize>]) -> (Vec<Option<usize>>, usize) {
    let mut levels: Vec<Option<usize>> = vec![None; adj.len()];
    levels[root] = Some(0);
    let mut queue = std::collections::VecDeque::from([root]);
    let mut depth = 0;
    while let Some(v) = queue.pop_front() {
        let lv = levels[v].unwrap();
        depth = depth.max(lv);
        for &u in &adj[v] {
            if levels[u].is_none() {
                levels[u] = Some(lv + 1);
                queue.push_back(u);
            }
        }
    }
    (levels, depth)
}
