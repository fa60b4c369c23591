//! Causal mediation analysis for daily count time series.
//!
//! The crate estimates natural direct and indirect effects of a continuous
//! exposure on a count outcome acting through a continuous mediator. The
//! outcome side is a quasi-Poisson log-linear regression with exposure
//! splines and exposure-quartile interactions; the mediator side is either a
//! sum-of-trees (BART) posterior or a spline-linear regression. Effects are
//! ratios of nested-counterfactual means, identified in closed form under a
//! Gaussian mediator working model and averaged over the empirical
//! confounder distribution with Bayesian-bootstrap weights.
//!
//! Everything here is pure computation over in-memory data; the companion
//! `medbart` crate supplies file formats and the command line.

#![no_std]
#![deny(unreachable_patterns)]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod bart;
pub mod basis;
pub mod data;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod math;
pub mod mediation;
pub mod mediator_linear;
pub mod rng;
pub mod simstudy;

pub use error::{Error, Result};
