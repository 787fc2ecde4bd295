//! Effective Hamiltonians for one-dimensional viscous Hamilton-Jacobi
//! equations `u_t = a(x) u_xx + G(u_x) + beta V(x)` in sampled random media.
//!
//! Two independent routes are provided: a corrector-ODE construction with a
//! gluing recursion over the extrema of `G` ([`effective_h`]) and a monotone
//! finite-difference solver for the Cauchy problem with affine data
//! ([`pde_reference`]). [`harness`] runs configured experiments and
//! cross-validates the routes; [`props`] holds randomized property suites.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod corrector;
pub mod effective_h;
pub mod env_media;
pub mod harness;
pub mod nonlinearity;
pub mod pde_reference;
pub mod props;

pub use error::{Error, Result};
