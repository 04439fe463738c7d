//! 4D Gaussian splatting for fast-moving scenes captured by staggered multi-camera rigs.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose; pixel loops index several buffers at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod capture;
pub mod experiment;
pub mod frame;
pub mod geometry;
pub mod metrics;
pub mod optimize;
pub mod raster;
pub mod refine;
pub mod scene;
