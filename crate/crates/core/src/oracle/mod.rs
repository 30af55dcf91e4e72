//! Exact references: closed-form quadratic-Gaussian moments and 1-D grid
//! computations of the posterior flow.

pub mod posterior;
pub mod qg;
