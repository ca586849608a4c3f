//! Adaptive conformal prediction with a random-forest localizer.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base;
pub mod bench;
pub mod calibration;
pub mod cli;
pub mod error;
pub mod forest;
pub mod graph;
pub mod scores;
pub mod seed;
mod serde_f64;

pub use error::{Error, Result};
