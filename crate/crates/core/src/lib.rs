//! Core algorithms for semi-supervised knowledge distillation (SSLKD) on
//! binary road segmentation.
//!
//! Everything in this crate is pure computation over owned buffers: synthetic
//! scene generation, dataset splitting, the segmentation model zoo with
//! hand-written forward/backward passes, the distillation losses, SGD
//! training loops, and confusion-matrix metrics. File formats, checkpointing
//! and the experiment runner live in the companion `sslkd` crate.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std` feature
//! only switches the test builds back to the standard library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod eval;
pub mod hash;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use tensor::{LabelMap, Tensor};
