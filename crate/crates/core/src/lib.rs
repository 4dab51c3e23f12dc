//! Numerical laboratory for the Donaldson heat flow on Higgs bundles over
//! complex tori with Hermitian (possibly non-Kähler) base metrics.

pub mod bundle;
pub mod error;
pub mod expr;
pub mod flow;
pub mod forms;
pub mod geometry;
pub mod krylov;
pub mod lattice;
pub mod matfun;
pub mod stability;

pub use error::{Error, Result};
pub use lattice::{LatticeGrid, Mat, MatrixField, ScalarField, C64};
