//! Large covariance estimation under global + local latent factor models.
//!
//! The crate provides the sample covariance, POET, POET2 and Double-POET
//! estimators, eigenvalue-ratio selection of factor counts, regularized
//! spectral clustering for unknown group membership, a Monte Carlo harness
//! and a gross-exposure-constrained minimum-variance backtester.

pub mod clustering;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod pipeline;
pub mod portfolio;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order always follows the index.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}
