//! Presentation-attack detection with single-level wavelet features and a
//! residual convolutional classifier.
//!
//! The pipeline: a grayscale image goes through a one-level 2D DWT
//! ([`wavelet`]), the subbands are stacked into a feature tensor, and a
//! residual network ([`model`]) built from the layers in [`nn`] classifies it
//! as real or fake. [`train`] fits the network with SGD, [`metrics`] scores it
//! (accuracy, ROC/AUC, CMC), and [`data`] handles images, the synthetic
//! dataset, configs and checkpoints.

pub mod data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod wavelet;

#[cfg(feature = "cli")]
pub mod cli;

pub use tensor::{Tensor, TensorError};
