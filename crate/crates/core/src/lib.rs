//! Self-supervised representation learning for single-lead ECG.
//!
//! A multi-task 1D CNN learns to recognise which of six signal
//! transformations was applied to a 10 s ECG window. Its convolutional trunk
//! is then frozen and reused as the feature extractor for a small supervised
//! emotion classifier.
//!
//! Module map:
//! - [`signal`]: resampling, baseline-wander removal, z-scoring, segmentation
//! - [`transforms`]: the six pretext transformations
//! - [`dataset`]: pretext / emotion datasets, k-fold splits, binary file format
//! - [`nn`]: tensors, layers with reverse-mode gradients, losses, Adam, checkpoints
//! - [`pretext`]: the transformation-recognition network and its trainer
//! - [`downstream`]: frozen-trunk transfer and the emotion classifier
//! - [`metrics`]: confusion matrices, accuracy, F1
//! - [`sweep`]: transformation-parameter sweeps
//! - [`synth`]: synthetic ECG generator used in place of licensed corpora

pub mod dataset;
pub mod downstream;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pretext;
pub mod rng;
pub mod signal;
pub mod sweep;
pub mod synth;
pub mod transforms;

pub use error::{Error, FormatError, Result};
