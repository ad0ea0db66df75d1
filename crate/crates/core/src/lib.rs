//! Facial action unit detection from a global-local expression embedding,
//! fitted 3D morphable model expression coefficients and a transformer
//! classifier over per-AU tokens.

pub mod au;
pub mod cli;
pub mod embed;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod morphable;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
