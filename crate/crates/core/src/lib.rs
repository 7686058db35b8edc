//! Cascade residual convolutional networks for video foreground segmentation.
//!
//! A background network (BCNN) learns a residual map `r = BCNN(f)` such that
//! `sigmoid(f - r)` reconstructs the median background of a scene. A second
//! network (SCNN) reads the frame stacked with that residual map and emits a
//! per-pixel foreground probability.
//!
//! This crate is `no_std` + `alloc`: it holds the numerics, both networks, the
//! patch pipeline, the training loop, the evaluation metrics, and a synthetic
//! scene generator. File IO and the command line live in the `crcnn` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod checkpoint;
pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape4, Tensor4};
