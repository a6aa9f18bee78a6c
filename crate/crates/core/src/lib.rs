//! Transition densities of diffusion SDEs as conditional normalizing flows.
//!
//! The density of `X(t) | X(s) = x0` is represented as the push-forward of a
//! time-dependent Gaussian source (one Euler-Maruyama step) through a
//! conditional coupling flow. The flow parameters evolve in time according to
//! a Monte Carlo Galerkin projection of the Fokker-Planck equation and are
//! integrated with an adaptive Runge-Kutta 3(2) scheme.

// comparisons are written `!(a > b)` on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benes;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod flow;
pub mod galerkin;
pub mod integrator;
pub mod jet;
pub mod kv;
pub mod sde;
pub mod selftest;
pub mod source;
pub mod train;

pub use error::{Error, Result};
