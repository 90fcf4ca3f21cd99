//! Differentiable primitives. Every function records its backward rule when
//! any input is tracked and gradient recording is enabled.

mod basic;
mod conv;
mod norm;
mod spatial;

pub use basic::*;
pub use conv::{conv2d, linear};
pub use norm::group_norm;
pub use spatial::{avg_pool2, convex_upsample, gram, resample2x, resize_bilinear, softmax, warp, Resample};
