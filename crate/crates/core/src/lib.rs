//! Coupled Markov chain Monte Carlo samplers.

// Negated comparisons deliberately reject NaN.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod coupling;
pub mod error;
pub mod estimators;
pub mod langevin;
pub mod model;
pub mod ot;
pub mod poisson;
pub mod spectral;
pub mod variance;
pub mod zigzag;

pub use error::{Error, Result};
