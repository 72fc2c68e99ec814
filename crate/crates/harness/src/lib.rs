//! Reproducible commands over the `geodepth-core` toolkit: dataset generation, training,
//! evaluation, the UTS-ratio ablation, gradient and geometry checks, and stereo masking.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod geom;
pub mod gradcheck;

pub use config::HarnessConfig;
pub use error::{HarnessError, Result};
