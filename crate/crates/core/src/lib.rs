//! Excess-synchrony detection for multi-trial, multi-neuron spike trains.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod inference;
pub mod intensity;
pub mod loglinear;
pub mod rng;
pub mod simulate;
pub mod spikedata;

pub use error::{Error, Result};
