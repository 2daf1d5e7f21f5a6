//! Interflow: per-stage prediction branches on a convolutional backbone,
//! fused into one output by a hard or learned attention module, together
//! with the autograd engine, layers, training recipe, and dataset loaders
//! needed to train and inspect such models on a CPU.

pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod interflow;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autograd::{finite_diff_check, finite_diff_check_at, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
