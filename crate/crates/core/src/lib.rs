//! Step-first autoregressive denoising engine.
//!
//! A linear-Gaussian data world supplies an exact denoiser, which makes the
//! effect of generation order, context noise level and pipelining measurable
//! in closed form.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fkl;
pub mod generate;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
