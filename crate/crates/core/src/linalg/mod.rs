//! Sparse and dense linear algebra kernels.
//!
//! [`CsrMatrix`] is the only sparse matrix type in the crate; subdomain and
//! coarse operators are extracted from it rather than re-assembled.
//! [`SparseLu`] provides the direct solver used for all subdomain and coarse
//! solves. Matrix Market import/export lives in [`matrix_market`].

mod csr;
mod lu;
pub mod matrix_market;

pub use csr::CsrMatrix;
pub use lu::{LuOrdering, SparseLu};

use crate::error::{Error, Result};

/// Dot product. Panics if the lengths differ.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "dot: length mismatch");
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `y += alpha * x`. Panics if the lengths differ.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Maximum absolute entry (0 for the empty vector).
pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Maximum absolute difference between two vectors of equal length.
pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "max_abs_diff: length mismatch");
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Returns an error naming `context` if any entry is NaN or infinite.
pub fn ensure_finite(x: &[f64], context: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
