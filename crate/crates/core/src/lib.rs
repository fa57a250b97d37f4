//! Numerical laboratory for semimartingale local time.
//!
//! The crate simulates Wiener and Itô paths, estimates local time by
//! occupation bands and by discrete Tanaka sums, implements the Skorohod
//! reflection map and regulated SDEs, builds random time changes, evaluates
//! the extended Itô–Tanaka formula for difference-of-convex functions, and
//! checks the classical distributional identities of Brownian local time
//! with Kolmogorov–Smirnov tests.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convexcalc;
pub mod csv;
pub mod error;
pub mod experiment;
pub mod localtime;
pub mod occupation;
pub mod paths;
pub mod reflection;
pub mod timechange;
pub mod verify;

pub use error::{Error, Result};
