//! Numerical laboratory for moderately interacting multi-species particle
//! systems with Riesz/Coulomb interactions, the regularized (mollified)
//! aggregation-diffusion system they approximate, and the singular limiting
//! system.
//!
//! The crate is organized by level of description:
//!
//! * [`kernels`]: Riesz potential, bump mollifier, radial kernel tables for
//!   `V * chi_eps` and the analytic bound checks.
//! * [`particles`]: Euler-Maruyama simulation of the N-particle system and of
//!   the coupled mean-field copies driven by a PDE field.
//! * [`pde`]: periodic-box solver for the mollified and limiting systems plus
//!   the well-posedness monitors.
//! * [`metrics`]: relative entropy, L1/L2 distances, marginals, the
//!   law-of-large-numbers statistic and coupling probabilities.
//! * [`harness`]: predicted exponents, log-log fits and the rate experiments.
//! * [`config`] and [`io`]: strict TOML configuration and the binary file
//!   formats shared with the command-line driver.

pub mod config;
pub mod error;
pub mod exec;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod particles;
pub mod pde;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
