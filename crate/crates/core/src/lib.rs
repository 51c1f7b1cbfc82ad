//! Fingertip force-feedback grasp control for synergy-driven hands.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]

pub mod bridge;
pub mod contact;
pub mod controller;
pub mod error;
pub mod filter;
pub mod kinematics;
pub mod scenario;
pub mod synergy;
pub mod telemetry;
pub mod units;

pub use error::{Error, Result};
