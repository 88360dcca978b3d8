//! Bayesian flux inversion: Markov error model, Gibbs sampler, transport
//! surrogate and OSSE harness.

// `!(x > 0.0)` is used on purpose so that NaN is rejected as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod config;
pub mod error;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod model;
pub mod obs_operator;
pub mod osse;
pub mod sampler;
pub mod slice;
pub mod stats;
pub mod summary;
pub mod transport;

pub use error::{Error, Result};
pub use nalgebra;
