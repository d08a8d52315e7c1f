//! Posterior predictive p-values (ppp) and their calibrated counterparts
//! (cppp) for Bayesian models, computed with short calibration chains, with
//! Monte Carlo standard errors and analytic budget planning.

#![allow(clippy::needless_range_loop, clippy::type_complexity, clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dist;
pub mod error;
pub mod mcmc;
pub mod model;
pub mod models;
pub mod ppp;
pub mod repeat;
pub mod rng;
pub mod scenario;
pub mod uncertainty;

pub use error::{Error, Result};
