//! Bayesian variable selection for probit mixed models.
//!
//! A grouped Metropolis-within-Gibbs sampler draws the inclusion mask from
//! its coefficient-integrated conditional, then the coefficients, the
//! random-effect covariance, the latent liabilities and the random effects.
//! Around the sampler sit selection-frequency ranking, a subset stability
//! index, refit/prediction, and a synthetic benchmark generator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conditionals;
pub mod data;
pub mod error;
pub mod exec;
pub mod io;
pub mod linalg;
pub mod model;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod selection;
pub mod simgen;

pub use error::{Error, Result};
