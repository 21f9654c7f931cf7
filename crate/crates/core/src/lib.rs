//! Numerical laboratory for mean-field control with common noise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bsde;
pub mod error;
pub mod hjb;
pub mod lab;
pub mod measure;
pub mod model;
pub mod particle;
pub mod partialobs;
pub mod rng;

pub use error::{Error, Result};
