//! Core building blocks for shape-prior post-processing of segmentation
//! masks: binary mask algebra and the degradation model, segmentation
//! metrics, paired significance testing, and dataset IO.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod raster;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use raster::{GrayImage, ProbabilityMap};
