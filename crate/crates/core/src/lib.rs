//! Stereo matching guided by a visual hull.
//!
//! The matcher builds unit-norm descriptors at quarter resolution, keeps the
//! `k` best disparities per pixel inside the hull's disparity interval, and
//! refines the resulting estimate with small correlation windows computed on
//! demand. Hull bounds are optional at every stage.
//!
//! - [`geometry`]: cameras, octree hull carving, per-pixel disparity bounds.
//! - [`features`]: census/intensity descriptors and inner-product costs.
//! - [`matcher`]: sparse kNN initialization and iterative refinement.
//! - [`synth`]: procedural capture-stage scenes and renderer.
//! - [`eval`]: EPE, >4px and D1 metrics, mask perturbation, ablations.
//! - [`memstat`]: correlation memory model and allocation accounting.
//! - [`pipeline`]: end-to-end driver.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod disparity;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod image;
pub mod io;
pub mod matcher;
pub mod memstat;
pub mod pipeline;
pub mod synth;

pub use disparity::{DisparityMap, Resolution};
pub use error::{Error, Result};
pub use image::{GrayImage, Mask};
