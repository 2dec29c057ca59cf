//! Matrix-free Levenberg–Marquardt for 3D Gaussian splatting.
//!
//! The crate is organized bottom-up:
//!
//! * [`scene`]: Gaussians, cameras, flat parameter vectors, synthetic data.
//! * [`rasterizer`]: projection, sorting and alpha blending.
//! * [`residuals`]: the square-rooted L1 + SSIM residuals and metrics.
//! * [`jacobian`]: the gradient cache and Jacobian-vector products.
//! * [`solver`]: PCG, the LM outer loop and the ADAM baseline.

// Index loops mirror the math; negated comparisons deliberately reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod jacobian;
pub mod rasterizer;
pub mod residuals;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
