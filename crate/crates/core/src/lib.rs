//! Reading recognition from egocentric sensors.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod sim;
pub mod stream;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
