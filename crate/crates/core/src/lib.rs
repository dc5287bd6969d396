//! Sparse vector-quantized, FFN-free transformer forecaster.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors with a reverse-mode tape.
//! * [`data`]: CSV loading, split/windowing, noise injection and few-shot subsets.
//! * [`revin`]: reversible instance normalization.
//! * [`svq`]: codebooks and the quantizer family (plain, sparse, cosine,
//!   k-means initialised, residual, adaptive).
//! * [`model`]: patch embedding, attention blocks and the forecaster.
//! * [`train`]: losses, Adam, the training loop and forecast metrics.
//! * [`experiments`]: ablation drivers and the command-line front end.

pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
pub mod revin;
pub mod svq;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
