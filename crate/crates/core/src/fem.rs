//! P1 finite element discretization of the Poisson model problem
//! `-Δu = f` on the unit square with homogeneous Dirichlet boundary.
//!
//! The square is meshed by an `n x n` grid of cells, each split into two
//! triangles along the diagonal from the lower-left to the upper-right
//! corner. Boundary values are eliminated: only the `(n-1)^2` interior
//! vertices carry unknowns, numbered lexicographically by (row, column),
//! i.e. by y first and x second.
//!
//! The manufactured solution `u(x, y) = sin(pi x) sin(pi y)` with forcing
//! `f = 2 pi^2 sin(pi x) sin(pi y)` is used for error measurement.

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Structured triangulation of the unit square.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Cells per side.
    pub n: usize,
    /// Mesh width `1 / n`.
    pub h: f64,
    /// Vertex coordinates, indexed `j * (n + 1) + i` for grid point `(i, j)`.
    pub vertices: Vec<[f64; 2]>,
    /// Triangles as vertex index triples, counter-clockwise.
    pub triangles: Vec<[usize; 3]>,
    /// True for vertices on the boundary of the square.
    pub boundary: Vec<bool>,
}

impl Mesh {
    /// Builds the structured mesh with `n` cells per side.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::MeshTooSmall(n));
        }
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        let mut boundary = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
                boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let v = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                // Cell (i, j), split along the lower-left to upper-right
                // diagonal.
                triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
                triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
            }
        }
        Ok(Self {
            n,
            h,
            vertices,
            triangles,
            boundary,
        })
    }

    /// Vertex index of grid point `(i, j)`.
    pub fn vertex(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    /// Signed area of a triangle (positive for counter-clockwise).
    pub fn signed_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
        ];
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }
}

/// Assembled linear system together with the geometry of its unknowns.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    /// Stiffness matrix over the interior vertices.
    pub matrix: CsrMatrix,
    /// Load vector.
    pub rhs: Vec<f64>,
    /// Coordinates of the unknowns, aligned with the matrix numbering.
    pub dof_coords: Vec<[f64; 2]>,
    /// Cells per side of the originating mesh.
    pub mesh_n: usize,
}

impl DiscreteProblem {
    pub fn n_unknowns(&self) -> usize {
        self.rhs.len()
    }

    /// Nodal values of the manufactured solution at the unknowns.
    pub fn exact_solution(&self) -> Vec<f64> {
        self.dof_coords
            .iter()
            .map(|&[x, y]| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin())
            .collect()
    }
}

/// Forcing term of the model problem.
pub fn forcing(x: f64, y: f64) -> f64 {
    let pi = std::f64::consts::PI;
    2.0 * pi * pi * (pi * x).sin() * (pi * y).sin()
}

/// Assembles the stiffness matrix and load vector on `mesh`, eliminating the
/// Dirichlet boundary. The load uses the vertex quadrature rule
/// `|T| / 3 * f(vertex)` per triangle corner.
pub fn assemble(mesh: &Mesh) -> Result<DiscreteProblem> {
    let n = mesh.n;
    let m = n - 1; // interior vertices per side
    let n_unknowns = m * m;

    // Map vertex index -> unknown index (interior, lexicographic by (y, x)).
    let mut dof_of = vec![usize::MAX; mesh.vertices.len()];
    let mut dof_coords = Vec::with_capacity(n_unknowns);
    for j in 1..n {
        for i in 1..n {
            let v = mesh.vertex(i, j);
            dof_of[v] = dof_coords.len();
            dof_coords.push(mesh.vertices[v]);
        }
    }

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * mesh.triangles.len());
    let mut rhs = vec![0.0f64; n_unknowns];
    for tri in &mesh.triangles {
        let area = mesh.signed_area(tri);
        let [p0, p1, p2] = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        // Gradients of the barycentric basis functions.
        let inv2a = 1.0 / (2.0 * area);
        let grads = [
            [(p1[1] - p2[1]) * inv2a, (p2[0] - p1[0]) * inv2a],
            [(p2[1] - p0[1]) * inv2a, (p0[0] - p2[0]) * inv2a],
            [(p0[1] - p1[1]) * inv2a, (p1[0] - p0[0]) * inv2a],
        ];
        for (k, &vk) in tri.iter().enumerate() {
            let row = dof_of[vk];
            if row == usize::MAX {
                continue;
            }
            for (l, &vl) in tri.iter().enumerate() {
                let col = dof_of[vl];
                if col == usize::MAX {
                    continue; // boundary column: eliminated, value is zero
                }
                let kkl = area * (grads[k][0] * grads[l][0] + grads[k][1] * grads[l][1]);
                triplets.push((row, col, kkl));
            }
            let [x, y] = mesh.vertices[vk];
            rhs[row] += area / 3.0 * forcing(x, y);
        }
    }
    let matrix = CsrMatrix::from_triplets(n_unknowns, n_unknowns, &triplets)?;
    Ok(DiscreteProblem {
        matrix,
        rhs,
        dof_coords,
        mesh_n: n,
    })
}

/// Maximum nodal error and the scaled discrete l2 error `h * ||e||_2`
/// between a discrete solution and the manufactured solution.
pub fn nodal_error(u: &[f64], problem: &DiscreteProblem) -> (f64, f64) {
    assert_eq!(
        u.len(),
        problem.n_unknowns(),
        "nodal_error: length mismatch"
    );
    let exact = problem.exact_solution();
    let mut max = 0.0f64;
    let mut sq = 0.0f64;
    for (a, b) in u.iter().zip(&exact) {
        let d = (a - b).abs();
        max = max.max(d);
        sq += d * d;
    }
    let h = 1.0 / problem.mesh_n as f64;
    (max, h * sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{LuOrdering, SparseLu};

    #[test]
    fn mesh_counts_and_orientation() {
        let mesh = Mesh::unit_square(4).unwrap();
        assert_eq!(mesh.vertices.len(), 25);
        assert_eq!(mesh.triangles.len(), 32);
        assert_eq!(mesh.boundary.iter().filter(|&&b| b).count(), 16);
        for t in &mesh.triangles {
            let a = mesh.signed_area(t);
            assert!((a - mesh.h * mesh.h / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mesh_too_small_is_rejected() {
        assert!(matches!(Mesh::unit_square(1), Err(Error::MeshTooSmall(1))));
    }

    #[test]
    fn interior_stencil_is_four_minus_one() {
        // On this mesh the P1 stiffness matrix reproduces the 5-point
        // stencil: 4 on the diagonal, -1 to the four grid neighbors,
        // independent of h.
        let problem = assemble(&Mesh::unit_square(8).unwrap()).unwrap();
        let m = 7isize;
        let center = 3 * m + 3; // interior of the interior
        let (cols, vals) = problem.matrix.row(center as usize);
        for (c, v) in cols.iter().zip(vals) {
            let offset = *c as isize - center;
            match offset {
                0 => assert!((v - 4.0).abs() < 1e-13),
                1 | -1 => assert!((v + 1.0).abs() < 1e-13),
                o if o == m || o == -m => assert!((v + 1.0).abs() < 1e-13),
                // Contributions along the cell diagonal cancel; the entry is
                // stored but numerically zero.
                o if o == m + 1 || o == -(m + 1) => assert!(v.abs() < 1e-13),
                other => panic!("unexpected stencil neighbor offset {other}"),
            }
        }
    }

    #[test]
    fn matrix_is_exactly_symmetric() {
        let problem = assemble(&Mesh::unit_square(16).unwrap()).unwrap();
        assert!(problem.matrix.is_symmetric());
    }

    #[test]
    fn numbering_is_lexicographic_by_y_then_x() {
        let problem = assemble(&Mesh::unit_square(4).unwrap()).unwrap();
        let c = &problem.dof_coords;
        assert_eq!(c.len(), 9);
        assert_eq!(c[0], [0.25, 0.25]);
        assert_eq!(c[1], [0.5, 0.25]);
        assert_eq!(c[3], [0.25, 0.5]);
    }

    #[test]
    fn discrete_solution_converges_to_manufactured() {
        // Nodal max error of the P1 discretization is O(h^2); check the
        // ratio between two resolutions.
        let mut errors = Vec::new();
        for n in [8, 16] {
            let problem = assemble(&Mesh::unit_square(n).unwrap()).unwrap();
            let lu = SparseLu::factor(&problem.matrix, LuOrdering::default()).unwrap();
            let u = lu.solve(&problem.rhs);
            let (max, _) = nodal_error(&u, &problem);
            errors.push(max);
        }
        let rate = errors[0] / errors[1];
        assert!(
            rate > 3.3 && rate < 4.7,
            "expected ~4x error reduction, got {rate}"
        );
    }
}
