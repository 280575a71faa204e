//! The chapters of `book/` as modules, so `cargo test --doc` runs every code
//! block of the guide against the current API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/synthetic-truth.md")]
pub mod synthetic_truth {}
#[doc = include_str!("../../../book/src/observations.md")]
pub mod observations {}
#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("../../../book/src/variational-model.md")]
pub mod variational_model {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
