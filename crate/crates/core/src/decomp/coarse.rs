//! Geometric coarse space for the two-level method.
//!
//! The coarse space is the P1 space on a coarser `n_c x n_c` grid of the
//! same unit square, with `n_c` dividing the fine `n` so every fine vertex
//! lies inside (or on the boundary of) a unique coarse triangle. The
//! restriction `R_0` interpolates fine unknowns from the interior coarse
//! vertices; the coarse operator is the Galerkin product `A_0 = R_0 A R_0^T`.
//!
//! For the solvers, the interesting cross sections are per subdomain: the
//! compressed products `R_0 R_p^T` (subdomain contribution to the coarse
//! right-hand side) and `R_p R_0^T` (coarse correction restricted to the
//! subdomain), stored per [`CoarseLink`] over the subdomain's coarse support
//! rows only.

use crate::decomp::Decomposition;
use crate::error::{Error, Result};
use crate::fem::DiscreteProblem;
use crate::linalg::CsrMatrix;

/// Coarse-space cross section of one subdomain.
#[derive(Debug, Clone)]
pub struct CoarseLink {
    /// Coarse unknowns whose basis functions touch this subdomain, sorted.
    pub coarse_rows: Vec<usize>,
    /// `R_0 R_p^T` with rows compressed to `coarse_rows`:
    /// maps a local vector to its coarse contribution.
    pub to_coarse: CsrMatrix,
    /// `R_p R_0^T` with columns compressed to `coarse_rows`: maps coarse
    /// values on the support rows to local values.
    pub from_coarse: CsrMatrix,
}

/// Coarse grid, restriction, Galerkin operator and per-subdomain links.
#[derive(Debug, Clone)]
pub struct CoarseSpace {
    /// Coarse cells per side.
    pub n_coarse: usize,
    /// Restriction `R_0` of size `(n_coarse - 1)^2 x N`.
    pub restriction: CsrMatrix,
    /// Galerkin coarse operator `A_0 = R_0 A R_0^T`.
    pub matrix: CsrMatrix,
    /// One link per subdomain.
    pub links: Vec<CoarseLink>,
}

impl CoarseSpace {
    /// Number of coarse unknowns.
    pub fn n_unknowns(&self) -> usize {
        self.restriction.nrows()
    }
}

/// Picks the coarse grid size: among the divisors `d >= 2` of `n`, the one
/// whose interior vertex count `(d - 1)^2` is closest to
/// `target_ratio * parts` (ties broken toward the smaller grid).
pub fn choose_coarse_size(n: usize, parts: usize, target_ratio: usize) -> Result<usize> {
    let target = (target_ratio * parts) as f64;
    (2..=n)
        .filter(|d| n.is_multiple_of(*d))
        .min_by(|&a, &b| {
            let da = (((a - 1) * (a - 1)) as f64 - target).abs();
            let db = (((b - 1) * (b - 1)) as f64 - target).abs();
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        })
        .ok_or(Error::NoFeasibleCoarseGrid { n })
}

/// Builds the coarse space for `problem` on a decomposition of its unknowns.
pub fn build_coarse(
    problem: &DiscreteProblem,
    decomp: &Decomposition,
    target_ratio: usize,
) -> Result<CoarseSpace> {
    if decomp.n_global != problem.n_unknowns() {
        return Err(Error::InvalidConfig(format!(
            "decomposition covers {} unknowns, problem has {}",
            decomp.n_global,
            problem.n_unknowns()
        )));
    }
    let n = problem.mesh_n;
    let n_coarse = choose_coarse_size(n, decomp.n_subdomains(), target_ratio)?;
    let restriction = interpolation_rows(n, n_coarse)?;
    let matrix = restriction
        .matmul(&problem.matrix)?
        .matmul(&restriction.transpose())?;
    let links = build_links(&restriction, decomp)?;
    Ok(CoarseSpace {
        n_coarse,
        restriction,
        matrix,
        links,
    })
}

/// P1 interpolation weights from the interior coarse vertices to the fine
/// unknowns, as the rows of `R_0`.
fn interpolation_rows(n: usize, n_coarse: usize) -> Result<CsrMatrix> {
    if n_coarse < 2 || !n.is_multiple_of(n_coarse) {
        return Err(Error::NoFeasibleCoarseGrid { n });
    }
    let m = n - 1;
    let mc = n_coarse - 1;
    let s = n / n_coarse; // fine cells per coarse cell
    let sf = s as f64;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(3 * m * m);
    for g in 0..m * m {
        let i = g % m + 1; // fine grid coordinates in 1..n-1
        let j = g / m + 1;
        let cx = i / s; // coarse cell; i = cx * s puts the point on its left edge
        let cy = j / s;
        let fx = (i - cx * s) as f64 / sf;
        let fy = (j - cy * s) as f64 / sf;
        // The coarse cell splits along its lower-left to upper-right
        // diagonal, matching the fine mesh.
        let (nodes, weights): ([(usize, usize); 3], [f64; 3]) = if fx >= fy {
            (
                [(cx, cy), (cx + 1, cy), (cx + 1, cy + 1)],
                [1.0 - fx, fx - fy, fy],
            )
        } else {
            (
                [(cx, cy), (cx + 1, cy + 1), (cx, cy + 1)],
                [1.0 - fy, fx, fy - fx],
            )
        };
        for ((a, b), w) in nodes.iter().zip(weights) {
            if w != 0.0 && (1..=mc).contains(a) && (1..=mc).contains(b) {
                let row = (b - 1) * mc + (a - 1);
                triplets.push((row, g, w));
            }
        }
    }
    CsrMatrix::from_triplets(mc * mc, m * m, &triplets)
}

fn build_links(restriction: &CsrMatrix, decomp: &Decomposition) -> Result<Vec<CoarseLink>> {
    let n0 = restriction.nrows();
    let mut links = Vec::with_capacity(decomp.n_subdomains());
    for map in &decomp.maps {
        // Coarse rows with support on this subdomain.
        let mut rows: Vec<usize> = Vec::new();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for r in 0..n0 {
            let (cols, vals) = restriction.row(r);
            let mut hit = false;
            for (g, v) in cols.iter().zip(vals) {
                if let Some(l) = map.local_of(*g) {
                    if !hit {
                        rows.push(r);
                        hit = true;
                    }
                    triplets.push((rows.len() - 1, l, *v));
                }
            }
        }
        let to_coarse = CsrMatrix::from_triplets(rows.len(), map.len(), &triplets)?;
        let from_coarse = to_coarse.transpose();
        links.push(CoarseLink {
            coarse_rows: rows,
            to_coarse,
            from_coarse,
        });
    }
    Ok(links)
}
