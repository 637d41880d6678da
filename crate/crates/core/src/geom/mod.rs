//! Camera models, epipolar geometry, relative pose and triangulation.

mod camera;
pub mod essential;
pub mod pose;
mod ransac;
mod triangulate;

use nalgebra::Vector2;
use thiserror::Error;

use crate::Real;

pub use camera::{project, CameraIntrinsics};
pub use essential::{decompose_essential, estimate_essential_five_point, EssentialMatrix};
pub use pose::{normalize_translation, Pose};
pub use ransac::{ransac_essential, RansacParams, RansacResult};
pub use triangulate::{triangulate, triangulate_normalized, Point3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point has non-positive depth in the camera frame")]
    DepthNonPositive,
    #[error("degenerate configuration: epipolar constraints are rank deficient")]
    DegenerateConfiguration,
    #[error("need at least {need} matches, got {got}")]
    InsufficientMatches { got: usize, need: usize },
    #[error("no consensus: best inlier ratio {ratio:.3}")]
    NoConsensus { ratio: f64 },
    #[error("cheirality vote tied at {best} points in front")]
    CheiralityAmbiguous { best: usize },
    #[error("viewing rays are parallel")]
    RaysParallel,
    #[error("translation has zero length")]
    ZeroTranslation,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a rotation (defect {defect:e})")]
    NotARotation { defect: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A correspondence between pixel `x` in the first image and `x_prime` in
/// the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match<T: Real> {
    pub x: Vector2<T>,
    pub x_prime: Vector2<T>,
    pub weight: T,
}

impl<T: Real> Match<T> {
    pub fn in_bounds(&self, k1: &CameraIntrinsics<T>, k2: &CameraIntrinsics<T>) -> bool {
        k1.contains(&self.x) && k2.contains(&self.x_prime)
    }
}
