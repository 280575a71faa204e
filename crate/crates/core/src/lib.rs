//! Synthetic-data toolkit for learned variational assimilation of wind-speed
//! fields from low-resolution, high-resolution and in-situ observations.

pub mod assim;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod field;
pub mod grid;
pub mod neural;
pub mod obs;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
