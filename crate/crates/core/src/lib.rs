//! Voxel radiance fields trained from degraded multi-view captures.
//!
//! * [`scene`] — manifest / image I/O and camera ray generation
//! * [`degrade`] — scene-consistent second-order degradation synthesis
//! * [`restore`] — pose-based view selection and pluggable restoration
//! * [`field`] — explicit voxel radiance field with analytic-gradient training
//! * [`guidance`] — supersampled pseudo-pixel supervision
//! * [`quadtree`] — loss-driven quadtree ray planning
//! * [`metrics`] — PSNR / SSIM evaluation
//!
//! The `voxrf` binary wires these into subcommands; see the README.

pub mod config;
pub mod degrade;
pub mod error;
pub mod field;
pub mod guidance;
pub mod image_buf;
pub mod metrics;
pub mod pipeline;
pub mod quadtree;
pub mod restore;
pub mod rng;
pub mod scene;
pub mod toy;

pub use error::{Error, Result};
pub use image_buf::ImageBuffer;
pub use scene::{CameraView, Ray, SceneSet};
