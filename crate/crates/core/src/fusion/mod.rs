//! Visibility-based fusion of per-view depth maps into one point cloud.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::depth::DepthMap;
use crate::geom::{CameraIntrinsics, Pose};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("fusion needs at least 2 depth maps, got {got}")]
    TooFewViews { got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub max_reproj_px: f64,
    pub max_rel_depth_diff: f64,
    /// Minimum number of agreeing views, the reference included.
    pub min_views: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { max_reproj_px: 1.0, max_rel_depth_diff: 0.01, min_views: 3 }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.max_reproj_px > 0.0 && self.max_rel_depth_diff > 0.0 && self.min_views >= 2) {
            return Err(FusionError::InvalidParameter(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint<T: Real> {
    pub xyz: Vector3<T>,
    pub support_count: usize,
    pub mean_reprojection_error: T,
}

/// Points in the world frame of the input poses; `frame` is the id of the
/// view whose camera frame that is (the lowest id for fused clouds).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    pub points: Vec<FusedPoint<T>>,
    pub frame: usize,
}

impl<T: Real> PointCloud<T> {
    /// Cloud of bare positions with unit support.
    pub fn from_positions(points: impl IntoIterator<Item = Vector3<T>>, frame: usize) -> Self {
        Self {
            points: points
                .into_iter()
                .map(|xyz| FusedPoint { xyz, support_count: 1, mean_reprojection_error: T::zero() })
                .collect(),
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<T>> + '_ {
        self.points.iter().map(|p| &p.xyz)
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| FusedPoint {
                    xyz: p.xyz.map(|v| U::lit(v.as_f64())),
                    support_count: p.support_count,
                    mean_reprojection_error: U::lit(p.mean_reprojection_error.as_f64()),
                })
                .collect(),
            frame: self.frame,
        }
    }
}

/// One input view: its depth map and world-to-camera pose.
#[derive(Debug, Clone, Copy)]
pub struct ViewDepth<'a, T: Real> {
    pub id: usize,
    pub depth: &'a DepthMap<T>,
    pub pose: Pose<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Consistency<T: Real> {
    /// The round trip was completed; `consistent` tells whether it passed
    /// both thresholds.
    Checked {
        consistent: bool,
        /// Depth of the round-tripped point in the reference camera.
        depth: T,
        /// Pixel distance between the round-tripped point and `p`.
        reprojection_error: T,
        /// Position hit in the other view.
        other_pixel: Vector2<T>,
    },
    /// The point leaves the other image or lands where it has no depth.
    OutOfView,
}

impl<T: Real> Consistency<T> {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Consistency::Checked { consistent: true, .. })
    }
}

/// Round trip of reference pixel `p = (x, y)` through another view:
/// back-project at the reference depth, project into the other view, read
/// its depth there (bilinear in inverse depth), back-project and return to
/// the reference. `relative` maps reference-camera points into the other
/// camera.
pub fn check_consistency<T: Real>(
    p: &Vector2<T>,
    ref_depth: T,
    other: &DepthMap<T>,
    relative: &Pose<T>,
    k: &CameraIntrinsics<T>,
    params: &FusionParams,
) -> Consistency<T> {
    let x_ref = k.back_project(p, ref_depth);
    let Ok(q) = k.project_camera(&relative.transform_point(&x_ref)) else { return Consistency::OutOfView };
    let Some(d_other) = other.sample(&q) else { return Consistency::OutOfView };
    let back = relative.inverse().transform_point(&k.back_project(&q, d_other));
    let Ok(p_back) = k.project_camera(&back) else { return Consistency::OutOfView };
    let err = (p_back - p).norm();
    let rel = (back.z - ref_depth).abs() / ref_depth;
    Consistency::Checked {
        consistent: err.as_f64() < params.max_reproj_px && rel.as_f64() < params.max_rel_depth_diff,
        depth: back.z,
        reprojection_error: err,
        other_pixel: q,
    }
}

struct Candidate<T: Real> {
    point: FusedPoint<T>,
    /// `(view slot, pixel index)` of every agreeing observer.
    observers: Vec<(usize, usize)>,
}

/// Fuses depth maps of views sharing the intrinsics `k`. Views are handled
/// in ascending id order; a pixel already explained by an emitted point is
/// not used as a reference again.
pub fn fuse<T: Real>(views: &[ViewDepth<'_, T>], k: &CameraIntrinsics<T>, params: &FusionParams) -> Result<PointCloud<T>, FusionError> {
    params.validate()?;
    if views.len() < 2 {
        return Err(FusionError::TooFewViews { got: views.len() });
    }
    for v in views {
        if v.depth.width() != k.width || v.depth.height() != k.height {
            return Err(FusionError::DimensionMismatch(format!(
                "view {} depth {}x{} vs intrinsics {}x{}",
                v.id,
                v.depth.height(),
                v.depth.width(),
                k.height,
                k.width
            )));
        }
    }
    let mut order: Vec<&ViewDepth<'_, T>> = views.iter().collect();
    order.sort_by_key(|v| v.id);
    let (w, h) = (k.width, k.height);
    let mut consumed = vec![vec![false; w * h]; order.len()];
    let mut points = Vec::new();

    for (slot, view) in order.iter().enumerate() {
        let relatives: Vec<(usize, Pose<T>)> = order
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != slot)
            .map(|(s, o)| (s, o.pose.relative_to(&view.pose)))
            .collect();
        let to_world = view.pose.inverse();
        let mask = &consumed[slot];
        let candidates: Vec<Option<Candidate<T>>> = (0..w * h)
            .into_par_iter()
            .map(|idx| {
                if mask[idx] {
                    return None;
                }
                let d = view.depth.get(idx / w, idx % w)?;
                let p = Vector2::new(T::lit((idx % w) as f64), T::lit((idx / w) as f64));
                let mut depth_sum = d;
                let mut err_sum = T::zero();
                let mut observers = Vec::new();
                for (s, rel) in &relatives {
                    if let Consistency::Checked { consistent: true, depth, reprojection_error, other_pixel } =
                        check_consistency(&p, d, order[*s].depth, rel, k, params)
                    {
                        depth_sum += depth;
                        err_sum += reprojection_error;
                        let (c, r) = (other_pixel.x.round().as_f64() as usize, other_pixel.y.round().as_f64() as usize);
                        observers.push((*s, r.min(h - 1) * w + c.min(w - 1)));
                    }
                }
                let support = 1 + observers.len();
                if support < params.min_views {
                    return None;
                }
                let mean_depth = depth_sum / T::lit(support as f64);
                Some(Candidate {
                    point: FusedPoint {
                        xyz: to_world.transform_point(&k.back_project(&p, mean_depth)),
                        support_count: support,
                        mean_reprojection_error: err_sum / T::lit(observers.len() as f64),
                    },
                    observers,
                })
            })
            .collect();
        for c in candidates.into_iter().flatten() {
            for (s, idx) in c.observers {
                consumed[s][idx] = true;
            }
            points.push(c.point);
        }
    }
    Ok(PointCloud { points, frame: order[0].id })
}
