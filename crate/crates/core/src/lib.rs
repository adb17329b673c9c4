//! Simulated camera-projector extrinsic auto-correction.
//!
//! A projector paints a red square onto a fiducial tag lying on a table. If the
//! believed camera-to-projector extrinsics are off, the square lands beside
//! the tag. This crate renders that situation, generates labelled
//! demonstration sequences, trains a small convolutional regressor that reads
//! the offset from the camera image, and runs the damped correction loop that
//! pulls the extrinsics back into alignment.
//!
//! Modules:
//!
//! - [`geometry`]: frames, pinhole projection, ray-plane intersection.
//! - [`render`]: deterministic rasterizer for the camera's view.
//! - [`dataset`]: demonstration sequences and the on-disk manifest.
//! - [`regressor`]: the policy network, its training loop, and an analytic
//!   centroid-based estimator.
//! - [`correction`]: closed-loop episodes and evaluation reports.
//!
//! Geometry and the network are generic over [`Real`]; the aliases below fix
//! the scalar types the rest of the crate works in.

pub mod correction;
pub mod dataset;
pub mod geometry;
pub mod image;
pub mod regressor;
pub mod render;
pub mod scalar;

pub use scalar::Real;

/// Simulator geometry runs in double precision.
pub type Vec2 = geometry::Vec2<f64>;
pub type Vec3 = geometry::Vec3<f64>;
pub type Mat3 = geometry::Mat3<f64>;
pub type RigidTransform = geometry::RigidTransform<f64>;
pub type Intrinsics = geometry::Intrinsics<f64>;
pub type Plane = geometry::Plane<f64>;
pub type OffsetEstimate = geometry::OffsetEstimate<f64>;

/// Network weights as stored and trained.
pub type PolicyWeights = regressor::Weights<f32>;
/// Double-precision copy of the network used for numerical checks.
pub type ShadowWeights = regressor::Weights<f64>;

pub use image::Image;
pub use render::SceneConfig;
