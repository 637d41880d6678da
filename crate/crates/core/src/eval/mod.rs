//! Losses and evaluation metrics.

mod kdtree;

use rayon::prelude::*;
use thiserror::Error;

use crate::depth::DepthMap;
use crate::fusion::PointCloud;
use crate::matching::FlowField;
use crate::Real;

pub use kdtree::KdTree;

/// Default clamp applied to nearest-neighbour distances.
pub const DEFAULT_MAX_DIST: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prediction and ground truth have no jointly valid pixel")]
    NoOverlap,
}

/// `0.5 z²` for `|z| < 1`, `|z| − 0.5` otherwise.
#[inline]
pub fn huber<T: Real>(z: T) -> T {
    let a = z.abs();
    if a < T::one() {
        T::lit(0.5) * z * z
    } else {
        a - T::lit(0.5)
    }
}

#[inline]
pub fn huber_gradient<T: Real>(z: T) -> T {
    if z.abs() < T::one() {
        z
    } else if z > T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// A summed loss and the number of terms in the sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSum<T: Real> {
    pub sum: T,
    pub count: usize,
}

impl<T: Real> LossSum<T> {
    pub fn mean(&self) -> T {
        if self.count == 0 {
            T::zero()
        } else {
            self.sum / T::lit(self.count as f64)
        }
    }
}

/// `Σ huber(d̂ − d)` over jointly valid pixels.
pub fn depth_loss<T: Real>(pred: &DepthMap<T>, gt: &DepthMap<T>) -> Result<LossSum<T>, EvalError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(EvalError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (mut sum, mut count) = (T::zero(), 0);
    for r in 0..pred.height() {
        for c in 0..pred.width() {
            if let (Some(a), Some(b)) = (pred.get(r, c), gt.get(r, c)) {
                sum += huber(a - b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(EvalError::NoOverlap);
    }
    Ok(LossSum { sum, count })
}

fn check_flow_shapes<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<(), EvalError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(EvalError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// `Σ ‖ô − o‖²` over jointly valid pixels.
pub fn flow_loss<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<LossSum<T>, EvalError> {
    check_flow_shapes(pred, gt)?;
    let (mut sum, mut count) = (T::zero(), 0);
    for (i, (a, b)) in pred.vectors().iter().zip(gt.vectors()).enumerate() {
        if pred.valid_mask()[i] && gt.valid_mask()[i] {
            sum += (a - b).norm_squared();
            count += 1;
        }
    }
    Ok(LossSum { sum, count })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport<T: Real> {
    pub l_depth: T,
    pub l_flow: T,
    pub l_total: T,
    pub pixel_count: usize,
}

impl<T: Real> LossReport<T> {
    pub fn new(depth: LossSum<T>, flow: LossSum<T>) -> Self {
        Self { l_depth: depth.sum, l_flow: flow.sum, l_total: depth.sum + flow.sum, pixel_count: depth.count + flow.count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudMetrics<T: Real> {
    pub mean_accuracy: T,
    pub mean_completeness: T,
    pub overall: T,
}

impl<T: Real> CloudMetrics<T> {
    pub fn from_parts(mean_accuracy: T, mean_completeness: T) -> Self {
        Self { mean_accuracy, mean_completeness, overall: (mean_accuracy + mean_completeness) / T::lit(2.0) }
    }
}

/// Mean distance from each query point to its nearest reference point,
/// clamped at `max_dist`.
pub fn mean_nearest_distance<T: Real>(queries: &[nalgebra::Vector3<T>], reference: &KdTree<T>, max_dist: T) -> T {
    let total = queries
        .par_iter()
        .map(|q| reference.nearest(q).map_or(max_dist, |(_, d2)| d2.sqrt().min(max_dist)).as_f64())
        .collect::<Vec<f64>>()
        .into_iter()
        .sum::<f64>();
    T::lit(total / queries.len() as f64)
}

/// Accuracy (reconstruction to ground truth), completeness (ground truth to
/// reconstruction) and their mean.
pub fn cloud_metrics<T: Real>(recon: &PointCloud<T>, gt: &PointCloud<T>, max_dist: T) -> Result<CloudMetrics<T>, EvalError> {
    if recon.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let r: Vec<_> = recon.positions().copied().collect();
    let g: Vec<_> = gt.positions().copied().collect();
    let acc = mean_nearest_distance(&r, &KdTree::new(g.clone()), max_dist);
    let comp = mean_nearest_distance(&g, &KdTree::new(r), max_dist);
    Ok(CloudMetrics::from_parts(acc, comp))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics<T: Real> {
    pub avg_epe: T,
    pub frac_gt3px: T,
    /// Mean end-point error of the pixels above 3 px (0 when there are none).
    pub avg_err_gt3px: T,
    pub pixel_count: usize,
}

/// End-point-error statistics over jointly valid pixels.
pub fn flow_metrics<T: Real>(pred: &FlowField<T>, gt: &FlowField<T>) -> Result<FlowMetrics<T>, EvalError> {
    check_flow_shapes(pred, gt)?;
    let three = T::lit(3.0);
    let (mut sum, mut n, mut big_sum, mut big_n) = (T::zero(), 0usize, T::zero(), 0usize);
    for (i, (a, b)) in pred.vectors().iter().zip(gt.vectors()).enumerate() {
        if !(pred.valid_mask()[i] && gt.valid_mask()[i]) {
            continue;
        }
        let e = (a - b).norm();
        sum += e;
        n += 1;
        if e > three {
            big_sum += e;
            big_n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::NoOverlap);
    }
    let nf = T::lit(n as f64);
    Ok(FlowMetrics {
        avg_epe: sum / nf,
        frac_gt3px: T::lit(big_n as f64) / nf,
        avg_err_gt3px: if big_n > 0 { big_sum / T::lit(big_n as f64) } else { T::zero() },
        pixel_count: n,
    })
}
