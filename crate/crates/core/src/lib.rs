//! Functional difference-in-differences estimation with simultaneous
//! confidence bands and honest event-study tests.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod honest;
pub mod bands;
pub mod estimate;
pub mod panel;
pub mod rng;
pub mod sim;
pub mod special;
pub mod spline;

pub use error::{Error, ErrorClass, Result};
