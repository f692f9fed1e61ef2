//! Rigid registration of partial point clouds against a learned distance
//! field, with classical baselines, metrics and an experiment harness.

pub mod baselines;
pub mod diffnet;
pub mod distance_field;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod neural_reg;
pub mod synth;

pub use error::{Error, Result};
