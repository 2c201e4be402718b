//! Dense reference formulations used to verify the sparse, local-form and
//! concurrent implementations.
//!
//! Everything here favors obviousness over speed: operators are materialized
//! as dense matrices built straight from their definitions (restriction
//! rows are unit vectors, partition-of-unity masks are diagonal matrices,
//! products are triple loops), and systems are solved by Gaussian
//! elimination with partial pivoting. The solver and decomposition tests
//! compare their optimized counterparts against these at tight tolerances.

use crate::decomp::{Decomposition, SubdomainMap};
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMat {
    pub nrows: usize,
    pub ncols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_csr(a: &CsrMatrix) -> Self {
        let mut m = Self::zeros(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m.set(i, *c, *v);
            }
        }
        m
    }

    /// Diagonal 0/1 matrix from a Boolean mask.
    pub fn from_mask(mask: &[bool]) -> Self {
        let mut m = Self::zeros(mask.len(), mask.len());
        for (i, &b) in mask.iter().enumerate() {
            if b {
                m.set(i, i, 1.0);
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "mul_vec: length mismatch");
        (0..self.nrows)
            .map(|i| (0..self.ncols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn mul_mat(&self, other: &DenseMat) -> DenseMat {
        assert_eq!(self.ncols, other.nrows, "mul_mat: dimension mismatch");
        let mut out = DenseMat::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let aik = self.get(i, k);
                if aik != 0.0 {
                    for j in 0..other.ncols {
                        out.data[i * out.ncols + j] += aik * other.get(k, j);
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMat {
        let mut out = DenseMat::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMat) -> DenseMat {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> DenseMat {
        let mut out = self.clone();
        for a in &mut out.data {
            *a *= s;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMat) -> f64 {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &DenseMat, b: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.nrows, a.ncols, "gauss_solve: matrix must be square");
    assert_eq!(b.len(), a.nrows, "gauss_solve: rhs length mismatch");
    let n = a.nrows;
    let mut m = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let (pivot_row, pivot) = (k..n)
            .map(|i| (i, m.get(i, k)))
            .max_by(|l, r| l.1.abs().partial_cmp(&r.1.abs()).unwrap())
            .unwrap();
        if pivot.abs() <= 1e-14 * m.max_abs() {
            return Err(Error::Singular { row: k, pivot });
        }
        if pivot_row != k {
            for j in 0..n {
                let t = m.get(k, j);
                m.set(k, j, m.get(pivot_row, j));
                m.set(pivot_row, j, t);
            }
            x.swap(k, pivot_row);
        }
        for i in k + 1..n {
            let f = m.get(i, k) / m.get(k, k);
            if f != 0.0 {
                for j in k..n {
                    m.set(i, j, m.get(i, j) - f * m.get(k, j));
                }
                x[i] -= f * x[k];
            }
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= m.get(i, j) * x[j];
        }
        x[i] = acc / m.get(i, i);
    }
    Ok(x)
}

/// Dense inverse via `n` solves.
pub fn invert(a: &DenseMat) -> Result<DenseMat> {
    let n = a.nrows;
    let mut inv = DenseMat::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = gauss_solve(a, &e)?;
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    Ok(inv)
}

/// Brute-force `depth`-layer closure of `base` in the matrix graph of `a`,
/// by repeated full scans over all index pairs. The graph is that of the
/// stored sparsity pattern (explicitly stored zeros included), symmetrized.
pub fn closure_set(a: &CsrMatrix, base: &[usize], depth: usize) -> Vec<usize> {
    let n = a.nrows();
    let stored = |i: usize, j: usize| a.row(i).0.binary_search(&j).is_ok();
    let mut in_set = vec![false; n];
    for &g in base {
        in_set[g] = true;
    }
    for _ in 0..depth {
        let snapshot = in_set.clone();
        for i in 0..n {
            for j in 0..n {
                if snapshot[i] && (stored(i, j) || stored(j, i)) {
                    in_set[j] = true;
                }
            }
        }
    }
    (0..n).filter(|&g| in_set[g]).collect()
}

/// Dense restriction `R_p`: one unit row per local unknown.
pub fn restriction_dense(map: &SubdomainMap, n: usize) -> DenseMat {
    let mut r = DenseMat::zeros(map.len(), n);
    for (l, &g) in map.overlap.iter().enumerate() {
        r.set(l, g, 1.0);
    }
    r
}

/// Dense restricted additive Schwarz preconditioner
/// `M^{-1} = sum_p R_p^T D_p A_p^{-1} R_p`, with every factor built as an
/// explicit dense matrix.
pub fn ras_preconditioner_dense(a: &CsrMatrix, decomp: &Decomposition) -> Result<DenseMat> {
    let n = decomp.n_global;
    let ad = DenseMat::from_csr(a);
    let mut m_inv = DenseMat::zeros(n, n);
    for map in &decomp.maps {
        let r = restriction_dense(map, n);
        let d = DenseMat::from_mask(&map.owned_mask());
        let a_p = r.mul_mat(&ad).mul_mat(&r.transpose());
        let a_p_inv = invert(&a_p)?;
        let term = r.transpose().mul_mat(&d).mul_mat(&a_p_inv).mul_mat(&r);
        m_inv = m_inv.add(&term);
    }
    Ok(m_inv)
}

/// Global-form preconditioned Richardson trajectory
/// `u^{k+1} = u^k + damping * M^{-1} (f - A u^k)` from `u^0 = 0`, returning
/// the iterates `u^1 .. u^iters`.
pub fn richardson_trajectory(
    a: &CsrMatrix,
    f: &[f64],
    m_inv: &DenseMat,
    damping: f64,
    iters: usize,
) -> Vec<Vec<f64>> {
    let ad = DenseMat::from_csr(a);
    let mut u = vec![0.0; f.len()];
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let au = ad.mul_vec(&u);
        let r: Vec<f64> = f.iter().zip(&au).map(|(fi, ai)| fi - ai).collect();
        let c = m_inv.mul_vec(&r);
        for (ui, ci) in u.iter_mut().zip(&c) {
            *ui += damping * ci;
        }
        out.push(u.clone());
    }
    out
}

/// Composition of local states into the global approximation
/// `u = sum_p R_p^T D_p w_p`, built from dense factors.
pub fn compose_dense(decomp: &Decomposition, w: &[Vec<f64>]) -> Vec<f64> {
    let n = decomp.n_global;
    let mut u = vec![0.0; n];
    for (map, wp) in decomp.maps.iter().zip(w) {
        let r = restriction_dense(map, n);
        let d = DenseMat::from_mask(&map.owned_mask());
        let contrib = r.transpose().mul_mat(&d).mul_vec(wp);
        for (ui, ci) in u.iter_mut().zip(&contrib) {
            *ui += ci;
        }
    }
    u
}

/// Local-form restricted additive Schwarz sweeps on the stacked states, all
/// operators dense: per sweep and subdomain,
/// `t_q = D_q R_q f - A_q D_q w_q`, `r_p = sum_q R_p R_q^T t_q`,
/// `w_p += damping * A_p^{-1} r_p`. Returns the stacked states after each
/// sweep.
pub fn ras_stacked_sweeps(
    a: &CsrMatrix,
    f: &[f64],
    decomp: &Decomposition,
    damping: f64,
    sweeps: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = decomp.n_global;
    let ad = DenseMat::from_csr(a);
    let restrictions: Vec<DenseMat> = decomp
        .maps
        .iter()
        .map(|m| restriction_dense(m, n))
        .collect();
    let masks: Vec<DenseMat> = decomp
        .maps
        .iter()
        .map(|m| DenseMat::from_mask(&m.owned_mask()))
        .collect();
    let locals: Vec<DenseMat> = restrictions
        .iter()
        .map(|r| r.mul_mat(&ad).mul_mat(&r.transpose()))
        .collect();
    let mut w: Vec<Vec<f64>> = decomp.maps.iter().map(|m| vec![0.0; m.len()]).collect();
    let mut out = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let t: Vec<Vec<f64>> = decomp
            .maps
            .iter()
            .enumerate()
            .map(|(q, _)| {
                let df = masks[q].mul_vec(&restrictions[q].mul_vec(f));
                let adw = locals[q].mul_vec(&masks[q].mul_vec(&w[q]));
                df.iter().zip(&adw).map(|(x, y)| x - y).collect()
            })
            .collect();
        let mut new_w = w.clone();
        for (p, map) in decomp.maps.iter().enumerate() {
            let mut r_p = vec![0.0; map.len()];
            for q in 0..decomp.n_subdomains() {
                let scattered = restrictions[q].transpose().mul_vec(&t[q]);
                let gathered = restrictions[p].mul_vec(&scattered);
                for (ri, gi) in r_p.iter_mut().zip(&gathered) {
                    *ri += gi;
                }
            }
            let v = gauss_solve(&locals[p], &r_p)?;
            for (wi, vi) in new_w[p].iter_mut().zip(&v) {
                *wi += damping * vi;
            }
        }
        w = new_w;
        out.push(w.clone());
    }
    Ok(out)
}

/// Local-form Jacobi-Schwarz sweeps on the stacked states, with the
/// per-receiver partition masks built inline from their definition: receiver
/// `p` keeps all of its own state, and takes an external unknown from the
/// subdomain owning it. Returns the stacked states after each sweep.
pub fn js_stacked_sweeps(
    a: &CsrMatrix,
    f: &[f64],
    decomp: &Decomposition,
    sweeps: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = decomp.n_global;
    let ad = DenseMat::from_csr(a);
    let restrictions: Vec<DenseMat> = decomp
        .maps
        .iter()
        .map(|m| restriction_dense(m, n))
        .collect();
    let locals: Vec<DenseMat> = restrictions
        .iter()
        .map(|r| r.mul_mat(&ad).mul_mat(&r.transpose()))
        .collect();
    // mask[p][q]: diagonal over N_q as seen by receiver p.
    let mask = |p: usize, q: usize| -> DenseMat {
        let pmap = &decomp.maps[p];
        let qmap = &decomp.maps[q];
        if p == q {
            DenseMat::identity(qmap.len())
        } else {
            let m: Vec<bool> = qmap
                .overlap
                .iter()
                .map(|&g| decomp.owner_of[g] == q && pmap.local_of(g).is_none())
                .collect();
            DenseMat::from_mask(&m)
        }
    };
    let mut w: Vec<Vec<f64>> = decomp.maps.iter().map(|m| vec![0.0; m.len()]).collect();
    let mut out = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let mut new_w = w.clone();
        for (p, map) in decomp.maps.iter().enumerate() {
            let mut r_p = vec![0.0; map.len()];
            for q in 0..decomp.n_subdomains() {
                let d = mask(p, q);
                let df = d.mul_vec(&restrictions[q].mul_vec(f));
                let adw = locals[q].mul_vec(&d.mul_vec(&w[q]));
                let t: Vec<f64> = df.iter().zip(&adw).map(|(x, y)| x - y).collect();
                let gathered = restrictions[p].mul_vec(&restrictions[q].transpose().mul_vec(&t));
                for (ri, gi) in r_p.iter_mut().zip(&gathered) {
                    *ri += gi;
                }
            }
            let v = gauss_solve(&locals[p], &r_p)?;
            for (wi, vi) in new_w[p].iter_mut().zip(&v) {
                *wi += vi;
            }
        }
        w = new_w;
        out.push(w.clone());
    }
    Ok(out)
}

/// Global-form two-level trajectory
/// `u^{k+1} = u^k + 1/2 M^{-1} r + 1/2 R_0^T A_0^{-1} R_0 r` with
/// `r = f - A u^k`, from `u^0 = 0`. Returns the iterates `u^1 .. u^iters`.
pub fn two_level_trajectory(
    a: &CsrMatrix,
    f: &[f64],
    decomp: &Decomposition,
    restriction: &CsrMatrix,
    iters: usize,
) -> Result<Vec<Vec<f64>>> {
    let ad = DenseMat::from_csr(a);
    let r0 = DenseMat::from_csr(restriction);
    let m_inv = ras_preconditioner_dense(a, decomp)?;
    let a0 = r0.mul_mat(&ad).mul_mat(&r0.transpose());
    let a0_inv = invert(&a0)?;
    let coarse_op = r0.transpose().mul_mat(&a0_inv).mul_mat(&r0);
    let total = m_inv.scale(0.5).add(&coarse_op.scale(0.5));
    Ok(richardson_trajectory(a, f, &total, 1.0, iters))
}

/// Residual norm `||f - A u||_2`.
pub fn residual_norm(a: &CsrMatrix, f: &[f64], u: &[f64]) -> f64 {
    let au = DenseMat::from_csr(a).mul_vec(u);
    f.iter()
        .zip(&au)
        .map(|(fi, ai)| (fi - ai) * (fi - ai))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{extend_overlap, partition_rectangular};
    use crate::fem::{assemble, Mesh};
    use crate::linalg::{LuOrdering, SparseLu};

    #[test]
    fn gauss_solves_what_sparse_lu_solves() {
        let problem = assemble(&Mesh::unit_square(6).unwrap()).unwrap();
        let b: Vec<f64> = (0..problem.n_unknowns())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let dense = gauss_solve(&DenseMat::from_csr(&problem.matrix), &b).unwrap();
        let sparse = SparseLu::factor(&problem.matrix, LuOrdering::default())
            .unwrap()
            .solve(&b);
        assert!(crate::linalg::max_abs_diff(&dense, &sparse) < 1e-12);
    }

    #[test]
    fn invert_times_matrix_is_identity() {
        let problem = assemble(&Mesh::unit_square(4).unwrap()).unwrap();
        let a = DenseMat::from_csr(&problem.matrix);
        let prod = invert(&a).unwrap().mul_mat(&a);
        assert!(prod.max_abs_diff(&DenseMat::identity(a.nrows)) < 1e-12);
    }

    #[test]
    fn gauss_rejects_singular() {
        let mut a = DenseMat::zeros(2, 2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 4.0);
        assert!(matches!(
            gauss_solve(&a, &[1.0, 1.0]),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn partition_of_unity_composes_to_identity() {
        // sum_p R_p^T D_p R_p = I, the algebraic partition of unity.
        let mesh = Mesh::unit_square(8).unwrap();
        let problem = assemble(&mesh).unwrap();
        let base = partition_rectangular(&mesh, 2, 2, 1.0).unwrap();
        let decomp = extend_overlap(&problem.matrix, &base, 2).unwrap();
        let n = decomp.n_global;
        let mut sum = DenseMat::zeros(n, n);
        for map in &decomp.maps {
            let r = restriction_dense(map, n);
            let d = DenseMat::from_mask(&map.owned_mask());
            sum = sum.add(&r.transpose().mul_mat(&d).mul_mat(&r));
        }
        assert_eq!(sum.max_abs_diff(&DenseMat::identity(n)), 0.0);
    }

    #[test]
    fn local_products_match_global_identity() {
        // R_p A R_q^T D_q == R_p R_q^T A_q D_q: moving data with the Boolean
        // operators commutes with applying the local operator, thanks to the
        // interior-ownership condition.
        let mesh = Mesh::unit_square(8).unwrap();
        let problem = assemble(&mesh).unwrap();
        let base = partition_rectangular(&mesh, 2, 2, 1.0).unwrap();
        let decomp = extend_overlap(&problem.matrix, &base, 1).unwrap();
        let n = decomp.n_global;
        let ad = DenseMat::from_csr(&problem.matrix);
        for p in 0..4 {
            for q in 0..4 {
                let rp = restriction_dense(&decomp.maps[p], n);
                let rq = restriction_dense(&decomp.maps[q], n);
                let dq = DenseMat::from_mask(&decomp.maps[q].owned_mask());
                let aq = rq.mul_mat(&ad).mul_mat(&rq.transpose());
                let lhs = rp.mul_mat(&ad).mul_mat(&rq.transpose()).mul_mat(&dq);
                let rhs = rp.mul_mat(&rq.transpose()).mul_mat(&aq).mul_mat(&dq);
                assert!(
                    lhs.max_abs_diff(&rhs) < 1e-12,
                    "identity fails for p = {p}, q = {q}"
                );
            }
        }
    }

    #[test]
    fn scattered_local_residuals_sum_to_global_residual() {
        // sum_q R_q^T t_q = f - A u with u = sum_q R_q^T D_q w_q.
        let mesh = Mesh::unit_square(8).unwrap();
        let problem = assemble(&mesh).unwrap();
        let base = partition_rectangular(&mesh, 2, 2, 1.0).unwrap();
        let decomp = extend_overlap(&problem.matrix, &base, 1).unwrap();
        let n = decomp.n_global;
        let ad = DenseMat::from_csr(&problem.matrix);
        // Arbitrary but deterministic local states.
        let w: Vec<Vec<f64>> = decomp
            .maps
            .iter()
            .map(|m| {
                (0..m.len())
                    .map(|l| ((l * 7 + m.p * 13) as f64 * 0.11).sin())
                    .collect()
            })
            .collect();
        let mut scattered = vec![0.0; n];
        for (q, map) in decomp.maps.iter().enumerate() {
            let r = restriction_dense(map, n);
            let d = DenseMat::from_mask(&map.owned_mask());
            let a_q = r.mul_mat(&ad).mul_mat(&r.transpose());
            let df = d.mul_vec(&r.mul_vec(&problem.rhs));
            let adw = a_q.mul_vec(&d.mul_vec(&w[q]));
            let t: Vec<f64> = df.iter().zip(&adw).map(|(x, y)| x - y).collect();
            let up = r.transpose().mul_vec(&t);
            for (si, ui) in scattered.iter_mut().zip(&up) {
                *si += ui;
            }
        }
        let u = compose_dense(&decomp, &w);
        let au = ad.mul_vec(&u);
        let resid: Vec<f64> = problem
            .rhs
            .iter()
            .zip(&au)
            .map(|(fi, ai)| fi - ai)
            .collect();
        assert!(crate::linalg::max_abs_diff(&scattered, &resid) < 1e-12);
    }

    #[test]
    fn closure_set_matches_direct_neighbors_at_depth_one() {
        let problem = assemble(&Mesh::unit_square(5).unwrap()).unwrap();
        let set = closure_set(&problem.matrix, &[0], 1);
        // Unknown 0 sits at the corner of a 4x4 interior grid. Its stored
        // row couples it to 1 and 4, plus the explicit zero at 5 from the
        // cancelled cell-diagonal contribution; pattern closure keeps it.
        assert_eq!(set, vec![0, 1, 4, 5]);
    }
}
