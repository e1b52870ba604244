//! Bayesian parameter inference for partially observed stochastic Volterra
//! models with particle MCMC and multilevel particle MCMC.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod functional;
pub mod io;
pub mod mcmc;
pub mod models;
pub mod multilevel;
pub mod rng;
pub mod sve;

pub use error::{Error, Result};
