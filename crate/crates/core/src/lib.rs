//! Spatially coupled GAMP for generalized linear models.

pub mod base_matrix;
pub mod channels;
pub mod error;
pub mod gamp;
pub mod harness;
pub mod potential;
pub mod priors;
pub mod quad;
pub mod se;
pub mod seeds;
pub mod sensing;
pub mod special;

pub use error::{Error, Result};
