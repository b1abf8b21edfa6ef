//! Monte Carlo and quadrature lab for the parabolic Anderson model driven by
//! Gaussian noise that is fractional in time and rough in space.
//!
//! Modules follow the computation pipeline: the noise covariance
//! ([`noise_model`]), shared integrators ([`quadrature`]), Brownian paths
//! ([`brownian`]), Feynman–Kac functionals ([`fk`]), moment bounds
//! ([`bounds`]), a discretized solution ([`spde`]) and the experiment driver
//! ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod brownian;
pub mod error;
pub mod exec;
pub mod fk;
pub mod harness;
pub mod noise_model;
pub mod quadrature;
pub mod rng;
pub mod spde;

pub use error::{LabError, Result};
pub use exec::Execution;
