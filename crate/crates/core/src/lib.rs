//! Geometry-guided diffusion motion magnification.
//!
//! Small motions in a video are measured as optical flow, magnified by a
//! conditional diffusion model that also suppresses noise-induced flow, and
//! rendered back into frames by a multi-scale warping synthesis network.

pub mod dmm;
pub mod error;
pub mod flowcore;
pub mod fvs;
pub mod nofa;
pub mod substrate;

pub use error::{Error, Result};
pub use flowcore::{FlowField, ImageBuffer, MetricReport};
