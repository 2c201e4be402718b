//! Overlapping Schwarz domain decomposition solvers, synchronous and
//! asynchronous, over an in-process emulation of one-sided (put/flag)
//! communication.
//!
//! The crate is organized around the pipeline used by the experiment driver:
//!
//! * [`fem`] builds the test problem (P1 elements for the Poisson equation on
//!   the unit square),
//! * [`decomp`] partitions the unknowns into overlapping subdomains and builds
//!   restriction/partition-of-unity operators plus an optional coarse space,
//! * [`linalg`] provides the sparse kernels and the direct solver used for
//!   subdomain and coarse solves,
//! * [`comm`] emulates passive-target one-sided communication (windows,
//!   atomic flags, neighborhood exchange) inside one process,
//! * [`solvers`] drives the six solver variants
//!   ({RAS, Jacobi-Schwarz, two-level RAS} x {sync, async}),
//! * [`metrics`] measures convergence and performance,
//! * [`reference`] holds independent dense reference formulations used to
//!   verify the sparse/concurrent implementations.

// Index loops here usually walk several arrays in lockstep; iterator
// rewrites obscure that. Negated comparisons like `!(x >= 1.0)` are
// deliberate so that NaN is rejected, not accepted.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod comm;
pub mod decomp;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod metrics;
pub mod reference;
pub mod solvers;

pub use error::{Error, Result};
