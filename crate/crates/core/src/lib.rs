//! Learning generative models of second-order stochastic dynamics from
//! trajectory samples.
//!
//! The model class is a two-step stochastic integrator with learnable
//! physical parameters or a neural radial force law. Training minimizes
//! an unbiased kernel two-sample loss between generated and observed
//! trajectory fragments; gradients flow through custom per-sample
//! adjoint recurrences rather than generic autodiff.

pub mod adjoint;
pub mod error;
pub mod experiments;
pub mod integrators;
pub mod kernels;
pub mod mlp;
pub mod mmd;
pub mod model;
pub mod optim;
pub mod protocols;
pub mod rng;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
