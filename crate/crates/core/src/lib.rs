//! Controlled particle filters for global optimization.
//!
//! Particles follow `dX/dt = −β∇φ(X)`, where `φ` solves the weighted Poisson
//! equation `−∇·(ρ∇φ) = (h − ĥ)ρ`. As `t → ∞` the ensemble concentrates on the
//! minimizers of `h`. Three gain approximations are provided: affine,
//! Galerkin and kernel-based.

// Negated comparisons deliberately reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod gain;
pub mod manifest;
pub mod objective;
pub mod oracle;
pub mod parametric;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
