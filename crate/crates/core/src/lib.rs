//! Two-stage probabilistic demand forecasting for dock-based bike-share stations.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod nbdist;
pub mod synth;
pub mod timegrid;
pub mod transformer;
pub mod tstar;

pub use error::{Error, Result};
