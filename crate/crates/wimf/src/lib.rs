//! Wave-informed matrix factorization.
//!
//! Factorizes a space-by-time matrix `Y ≈ D Xᵀ` where every spatial column of
//! `D` is softly pulled toward a solution of the discrete Helmholtz equation.
//! Columns are added one at a time from the solution of a polar problem, which
//! also certifies global optimality of the final factorization.
//!
//! Modules:
//! - [`spectral`]: the discrete Laplacian, its eigenbasis and the band-pass
//!   filters built from it.
//! - [`polar`]: the wavenumber line search and the escape direction.
//! - [`solver`]: block descent, column appends and the outer loop.
//! - [`datagen`]: the synthetic vibration and wave datasets plus the
//!   hyperparameter rules.
//! - [`metrics`]: mode matching, error measures, the PCA baseline and
//!   Monte-Carlo aggregation.
//! - [`io`]: CSV matrices and `key = value` files.
//! - [`linalg`]: singular values and vectors.

pub mod datagen;
mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod polar;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
