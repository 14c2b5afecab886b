//! Uncertainty estimators for regression, calibration metrics, and a
//! chance-constrained control-barrier controller solved as a small
//! second-order cone program.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bench1d;
pub mod cbf;
pub mod data;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod sim;
pub mod socp;
pub mod special;

pub use data::{Dataset, Matrix};
pub use error::{Error, Result};
