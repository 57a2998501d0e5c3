//! Relative pose of a GPS-denied agent's INS frame from direction-of-arrival
//! readings of a GPS-equipped broadcaster.

// `!(a <= b)` style comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod linear_system;
pub mod mle;
pub mod pipeline;
pub mod procrustes;
pub mod scenario;
pub mod sdp;
pub mod three_agent;

pub use error::{Error, Result};
