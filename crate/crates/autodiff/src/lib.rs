//! Reverse-mode automatic differentiation over dense tensors, sized for the
//! convolutional generators used in iterative CT reconstruction: conv2d,
//! per-channel affine, leaky-ReLU, sigmoid, bilinear upsampling, channel
//! concatenation, the Radon forward operator, data discrepancies and a
//! smoothed TV — plus the Adam optimizer and parameter checkpoints.
//!
//! Everything is f64. Each `Tape` hosts one forward/backward cycle; rebuild
//! (or `reset`) the tape per optimization step.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod network;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{AdError, Result};
pub use network::{build_network, clip_params, Generator, NetworkConfig, Param, ParamStore};
pub use tape::{Tape, ValueId};
pub use tensor::Tensor;
