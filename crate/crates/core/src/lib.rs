//! Adaptive memory momentum: heavy-ball optimizers whose momentum
//! coefficient is computed in closed form at every step from a two-plane
//! proximal model of the loss, together with fixed-momentum baselines,
//! brute-force oracles, and a small convex benchmark harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::single_range_in_vec_init)]

pub mod beta;
pub mod data;
pub mod error;
pub mod harness;
pub mod math;
pub mod optim;
pub mod problems;
pub mod verify;

pub use error::{Error, Result};
