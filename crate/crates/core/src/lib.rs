//! Dense-flow structure from motion and plane-sweep multi-view stereo.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geom;
mod scalar;

pub use scalar::Real;
pub mod matching;
pub mod depth;
pub mod synth;
pub mod fusion;
pub mod eval;
pub mod io;
pub mod pipeline;

pub type Pose64 = geom::Pose<f64>;
pub type Pose32 = geom::Pose<f32>;
pub type Camera64 = geom::CameraIntrinsics<f64>;
pub type Camera32 = geom::CameraIntrinsics<f32>;
pub type FeatureMap64 = matching::FeatureMap<f64>;
pub type FeatureMap32 = matching::FeatureMap<f32>;
pub type FlowField64 = matching::FlowField<f64>;
pub type FlowField32 = matching::FlowField<f32>;
pub type DepthMap64 = depth::DepthMap<f64>;
pub type DepthMap32 = depth::DepthMap<f32>;
pub type PointCloud64 = fusion::PointCloud<f64>;
pub type PointCloud32 = fusion::PointCloud<f32>;
