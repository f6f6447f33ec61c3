//! Nonparametric estimation for current status data with competing risks.
//!
//! The crate provides:
//!
//! - [`stepfn`]: step functions, greatest convex minorants and weighted
//!   isotonic regression, the shared computational primitives;
//! - [`estimators`]: the naive, scaled naive, truncated naive and maximum
//!   likelihood estimators of the sub-distribution functions, with a
//!   directional-derivative optimality certificate;
//! - [`limit`]: grid simulation of the limiting processes of both
//!   estimators, including the self-induced fixed point for the maximum
//!   likelihood limit and its diagnostics;
//! - [`sim`]: data generation from the exponential benchmark model, the
//!   Monte-Carlo mean-squared-error study, and localized finite-sample
//!   processes.
//!
//! The crate is `no_std` compatible (an allocator is required); disable the
//! default `std` feature for embedded use.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod math;

pub mod estimators;
pub mod limit;
pub mod sim;
pub mod stepfn;

pub use error::{Error, Result};
