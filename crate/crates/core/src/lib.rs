//! Motion-aware temporal partitioning for deformable Gaussian splatting.
//!
//! The crate trains a set of 3D Gaussians plus coarse/fine deformation
//! networks against synthetic dynamic scenes rendered by its own
//! differentiable orthographic splatter. Per-Gaussian dynamic scores
//! (max displacement + position variance, percentile-normalized, fused by
//! a harmonic mean) drive two structural decisions during training:
//! high-dynamic Gaussians are recursively split in time with their
//! deformation networks replicated per sub-segment, and low-dynamic
//! Gaussians are baked static and dropped from network evaluation.
//! A cross-frame consistency loss stitches renders across partition
//! boundaries.
//!
//! Everything is `f64` end to end so that every backward path can be
//! checked against central finite differences.

pub mod error;
pub mod gaussian;
pub mod image;
pub mod parallel;
pub mod render;

pub mod deform;
pub mod field_io;
pub mod mlp;

pub mod partition;
pub mod score;

pub mod loss;
pub mod metrics;

pub mod optim;
pub mod pipeline;
pub mod trainer;

pub mod ablate;
pub mod checkpoint;
pub mod scene;
pub mod toy;

mod math;

pub use error::{Error, Result};

/// 3-vector in world units.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 2-vector in pixel units.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3x3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// 2x2 matrix.
pub type Mat2 = nalgebra::Matrix2<f64>;
