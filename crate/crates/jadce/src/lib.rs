//! Group-sparse signal recovery for joint activity detection and channel
//! estimation (JADCE) in grant-free uplinks.
//!
//! A receiver observes `Y = S X + Z` where only a few rows of `X` are
//! nonzero (the active devices). This crate recovers `X` and the active set
//! with three interchangeable solvers:
//!
//! * [`prox::solve_group_lasso`] / [`prox::solve_constrained`] — mixed
//!   l1/l2-norm convex relaxation via accelerated proximal gradient,
//! * [`prox::solve_reweighted`] — iteratively reweighted group norms,
//! * [`exact::bnb_solve`] — exact group-l0 minimization through a Big-β
//!   mixed-integer reformulation and a custom branch-and-bound search, with
//!   [`exact::brute_force_min_support`] as an independent enumeration oracle.
//!
//! [`harness`] adds seeded Monte-Carlo sweeps (success probability, NMSE,
//! activity-detection errors, minimum pilot length) and [`cli`] exposes the
//! whole thing as the `jadce` command-line tool. The `examples/` directory
//! has one runnable walkthrough per capability.

pub mod cli;
pub mod error;
pub mod exact;
pub mod harness;
mod linalg;
pub mod model;
pub mod prox;

pub use error::{Error, Result};
pub use model::{
    derealify, generate_scenario, realify, row_group_norms, stack_complex, ComplexMatrix,
    RealMatrix, RealifiedSystem, Scenario,
};
