//! Geometry-preserving monocular depth training toolkit.
//!
//! * [`raster`] and [`codec`]: rasters, masks, cameras, point clouds, PFM/PLY files.
//! * [`geometry`]: unprojection and disparity-shift distortion measures.
//! * [`alignment`]: mean/std normalization, median log alignment, least-squares fits.
//! * [`losses`]: scale-invariant and shift-and-scale-invariant L1 losses with gradients.
//! * [`metrics`]: threshold/relative error and point-cloud RMSE after alignment.
//! * [`synth`]: seeded toy scenes, label corruption, stereo masking, mixture sampling.
//! * [`model`]: a small per-pixel log-depth regressor and its training loop.

pub mod alignment;
pub mod codec;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{CameraIntrinsics, Grid2D, PointCloud, SupervisionClass, Unit, ValidityMask};
