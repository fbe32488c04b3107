//! Gradient-constrained convolutional autoencoders for one-class anomaly detection.
//!
//! The crate trains an autoencoder whose decoder-weight gradients are pushed
//! to align (in cosine) with their running training average, then scores test
//! images by reconstruction error plus gradient misalignment.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcon;
pub mod nn;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
