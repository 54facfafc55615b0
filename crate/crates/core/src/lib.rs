//! Two-stage lesion detection cascade for capsule-endoscopy-like image
//! sequences.
//!
//! Stage one is an anchor-based region-proposal detector built on a residual
//! backbone. Stage two is a recognition network with top-down feature-pyramid
//! fusion that re-classifies every stage-one candidate, so a candidate can be
//! relabelled or dropped but never added. Evaluation works at three levels:
//! proposals, images and patients.
//!
//! Everything, including the tensor and layer code, is implemented in this
//! crate so that gradients can be checked against finite differences.

pub mod cascade;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod models;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
