//! Plane-regularized reconstruction of indoor RGB-D scenes.
//!
//! The pipeline takes a dense mesh fused from an RGB-D sequence together with
//! the posed keyframes and produces a lightweight textured mesh:
//!
//! 1. [`partition`]: planar clusters by greedy PCA-energy agglomeration, then
//!    plane merging.
//! 2. [`simplify`]: two-phase cluster-aware quadric edge collapse.
//! 3. [`texgen`]: keyframe selection, per-cluster texel grids and visibility.
//! 4. [`lines`]: plane-border lines matched to detected image segments.
//! 5. [`optimize_tex`]: alternating Gauss-Newton over texel colors, camera
//!    poses and planes.
//! 6. [`optimize_geo`]: sparse linear least squares pulling vertices onto the
//!    planes while keeping border vertices on plane intersections.
//!
//! [`synth`] renders ground-truth scenes for testing; [`pipeline`] runs the
//! stages from a config file.

pub mod config;
pub mod error;
pub mod geom;
pub mod image;
pub mod lines;
pub mod mesh;
pub mod optimize_geo;
pub mod optimize_tex;
pub mod partition;
pub mod pipeline;
pub mod scene_io;
pub mod simplify;
pub mod sparse;
pub mod synth;
pub mod texgen;

pub use error::{Error, Result};
pub use geom::{CameraIntrinsics, Plane, Pose, Vec2, Vec3};
pub use mesh::TriMesh;
