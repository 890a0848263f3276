//! Parallel-beam CT reconstruction primitives.
//!
//! The crate provides the discrete Radon transform and its exact adjoint,
//! filtered back-projection, TV-regularized inversion, phantom/observation
//! simulation with Gaussian and photon noise, dataset handling, and the
//! PSNR/SSIM metrics used to compare reconstructors.

pub mod dataset;
pub mod error;
pub mod fbp;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod operator;
pub mod phantom;
pub mod result;
pub mod variational;

pub use error::{Result, TomoError};
pub use geometry::{Image, ParallelGeometry, Sinogram};
pub use result::{ReconstructionResult, TracePoint};
