//! Generalized space-time autoregressive (GSTAR) models with LASSO and
//! hierarchical group-LASSO penalties, fitted by FISTA and evaluated with
//! rolling-origin cross-validation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod linalg;
pub mod models;
pub mod penalty;
pub mod pipeline;
pub mod rng;
pub mod series;
pub mod simulate;
pub mod solver;
pub mod trips;
pub mod weights;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
