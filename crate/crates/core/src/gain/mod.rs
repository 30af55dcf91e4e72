//! Approximations of the control function `u = −β∇φ`.

pub mod affine;
pub mod galerkin;
pub mod kernel;

pub use affine::{affine_gain, solve_lyapunov, AffineGain};
pub use galerkin::{assemble, galerkin_gain, hermite_basis, solve_coefficients, BasisFunction, BasisSet, GalerkinSolution};
pub use kernel::{build_operator, fixed_point, kernel_gain, KernelOperator, PotentialVector};
