//! Numerics for Fourier transforms of one-dimensional self-similar measures:
//! spectrum evaluation, large-deviation profiles of the transform modulus,
//! the entropy rate function of the x3 Cantor case via transfer-operator
//! pressure, and empirical verification of the envelope/partition estimates
//! behind the decay bound.

pub mod deviation;
pub mod envelope;
pub mod error;
pub mod fourier;
pub mod ifs;
pub mod output;
pub mod rate;

pub use error::{Error, Result};
