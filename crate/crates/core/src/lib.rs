//! Simulation and optimization toolkit for the one-dimensional semilinear
//! stochastic heat equation
//!
//! ```text
//! du = (u_xx + b(t, x, u) + d/dx g(t, x, u)) dt + sqrt(eps) sigma(t, x, u) dW,   x in (0, 1)
//! ```
//!
//! with Dirichlet boundary conditions, driven by space-time white noise.
//!
//! - [`lattice`]: space-time grids, profiles and norms.
//! - [`kernels`]: heat kernels and the convolution operator `J`.
//! - [`coefficients`]: coefficient presets and growth/Lipschitz checks.
//! - [`noise`]: seeded Brownian-sheet increments and deterministic controls.
//! - [`solver`]: the perturbed, deterministic, linearized, skeleton and
//!   controlled equations.
//! - [`rate_fn`]: adjoint of the skeleton map and least-norm controls.
//! - [`experiments`]: Monte Carlo scaling studies.
//! - [`cli`] and [`report`]: run configs and CSV/JSON output.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod lattice;
pub mod noise;
pub mod rate_fn;
pub mod report;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
