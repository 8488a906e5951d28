//! Camera relocalization against feature-embedded Gaussian splat maps, on
//! the CPU.
//!
//! The pipeline: [`render`] rasterizes a [`Scene`] of descriptor-carrying
//! Gaussians into RGB/feature/depth maps; [`distill`] optimizes per-splat
//! color, opacity and descriptors against posed training views; [`coarse`]
//! estimates an initial query pose from 2D-3D descriptor matches with PnP
//! inside RANSAC; [`refine`] polishes it by photometric warp-loss descent
//! and optional feature-based re-matching. [`synth`] fabricates seeded test
//! worlds, [`colmap`] ingests text SfM models, and [`eval`] scores pose
//! estimates.

pub mod coarse;
pub mod colmap;
pub mod descriptors;
pub mod distill;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod raster;
pub mod refine;
pub mod render;
pub mod report;
pub mod rng;
pub mod synth;

pub use geometry::{
    backproject, compose, inverse, project, quat_to_rotmat, CameraIntrinsics, GeometryError, Pose,
    Quat,
};
pub use raster::Raster;
pub use render::{
    compositing_weights, project_gaussian, render, Gaussian, RenderChannels, RenderOutput, Scene,
    ALPHA_MIN_DEPTH, DEPTH_SENTINEL,
};
