//! Minimal neural-network kernel: tensors, layers with hand-written
//! backward passes, losses, Adam and a binary checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod fftconv;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use layers::{Conv1d, ConvAlgorithm, Dense, Dropout, GlobalMaxPool, LayerParams, MaxPool1d, Mode, Relu, Sigmoid, Softmax};
pub use scalar::{gemm, MatView, Scalar};
pub use tensor::Tensor;
