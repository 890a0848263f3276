//! Reconstruction methods built on the generator network: deep-image-prior
//! variants (plain, TV-regularized, warm-started from an initial
//! reconstruction), learned FBP post-processing, and the benchmark harness
//! that compares them against the classical baselines.

pub mod bench;
pub mod dip;
pub mod error;
pub mod plot;
pub mod postproc;
pub mod presets;

pub use dip::{
    dip_reconstruct, dip_with_initial, diptv_reconstruct, fit_parameterization, DipConfig,
    DipInitOutcome, FitResult,
};
pub use error::{ReconError, Result};
pub use postproc::{apply_postprocessor, train_postprocessor, TrainConfig};
