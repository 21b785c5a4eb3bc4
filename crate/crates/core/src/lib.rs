//! Numerical experiments on maximal regularity for stochastic convolutions.
//!
//! The crate provides diagonal spectral models of a sectorial operator `A`,
//! the Poisson-type kernels that represent its semigroup, simulation of
//! cylindrical noise and stochastic convolutions, estimators for
//! R-boundedness and one-sided maximal functions, and the Monte Carlo and
//! closed-form ratio statistics that measure the maximal regularity constant.

mod error;
pub mod quad;
pub mod seed;
pub mod convops;
pub mod kernels;
pub mod maxreg;
pub mod spectral;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
