//! Semiclassical simulation of a heavy classical pointer coupled to a quantum
//! oscillator through a continuous, decohering measurement.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod model;
pub mod phase_space;
pub mod qstate;
pub mod rng;
pub mod sampling;
pub mod spectral;
pub mod sse;
pub mod trajectories;

pub use error::{Error, Result};
