//! Calibrated activation thresholding for Gated-MLP blocks.
//!
//! The crate fits per-block magnitude cutoffs from sampled activations,
//! applies them during inference, and provides sparse forward kernels that
//! skip the weight columns and rows of switched-off hidden channels. A small
//! decoder-only model, a benchmark harness and the file formats used by the
//! `cats` CLI round it out.

pub mod activation;
pub mod calibration;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod seed;

pub use error::{CatsError, Result};
