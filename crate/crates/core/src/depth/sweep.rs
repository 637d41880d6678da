use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::{DepthError, DepthHypotheses, DepthMap};
use crate::geom::{CameraIntrinsics, Pose};
use crate::matching::FeatureMap;
use crate::Real;

/// Homography induced by the fronto-parallel plane `z = d` of the reference
/// camera, mapping reference pixels to pixels of the camera at `pose`
/// (`X_src = R X_ref + T`): `H = K (R + T nᵀ / d) K⁻¹` with `n = (0, 0, 1)`.
pub fn homography_for_plane<T: Real>(k: &CameraIntrinsics<T>, pose: &Pose<T>, d: T) -> Result<Matrix3<T>, DepthError> {
    if !(d > T::zero()) || !d.is_finite_real() {
        return Err(DepthError::NonPositiveDepth);
    }
    let mut m = pose.rotation;
    let inv_d = T::one() / d;
    for r in 0..3 {
        m[(r, 2)] += pose.translation[r] * inv_d;
    }
    Ok(k.as_matrix() * m * k.inverse_matrix())
}

/// Feature map of one source view and its pose relative to the reference.
#[derive(Debug, Clone, Copy)]
pub struct SourceView<'a, T: Real> {
    pub features: &'a FeatureMap<T>,
    pub pose: Pose<T>,
}

/// Matching cost per reference pixel and plane; `+∞` where no source view
/// sees the warped pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume<T: Real> {
    pub width: usize,
    pub height: usize,
    pub planes: usize,
    cost: Vec<T>,
}

impl<T: Real> CostVolume<T> {
    pub fn from_raw(width: usize, height: usize, planes: usize, cost: Vec<T>) -> Result<Self, DepthError> {
        if cost.len() != width * height * planes {
            return Err(DepthError::DimensionMismatch(format!("cost volume needs {} values", width * height * planes)));
        }
        Ok(Self { width, height, planes, cost })
    }

    /// Costs of all planes at pixel `(row, col)`.
    #[inline]
    pub fn column(&self, row: usize, col: usize) -> &[T] {
        let o = (row * self.width + col) * self.planes;
        &self.cost[o..o + self.planes]
    }

    pub fn data(&self) -> &[T] {
        &self.cost
    }
}

/// Plane-sweep cost: mean over the source views that see the warp of
/// `1 − cos(reference descriptor, bilinearly sampled source descriptor)`.
/// A view sees a warp when it lands at least one cell inside its grid.
pub fn plane_sweep<T: Real>(
    reference: &FeatureMap<T>,
    sources: &[SourceView<'_, T>],
    k: &CameraIntrinsics<T>,
    hyp: &DepthHypotheses<T>,
) -> Result<CostVolume<T>, DepthError> {
    if sources.is_empty() {
        return Err(DepthError::NoSourceViews);
    }
    let (w, h, dim) = (reference.width(), reference.height(), reference.dim());
    if sources.iter().any(|s| s.features.dim() != dim) {
        return Err(DepthError::DimensionMismatch("descriptor dimensions differ".into()));
    }
    let homographies: Vec<Vec<Matrix3<T>>> = sources
        .iter()
        .map(|s| hyp.planes().iter().map(|&d| homography_for_plane(k, &s.pose, d)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let n = hyp.len();
    let one = T::one();
    let mut cost = vec![T::zero(); w * h * n];
    cost.par_chunks_mut(w * n).enumerate().for_each(|(row, out)| {
        let mut sample = vec![T::zero(); dim];
        for col in 0..w {
            let a = reference.descriptor(row, col);
            let p = Vector3::new(T::lit(col as f64), T::lit(row as f64), one);
            for plane in 0..n {
                let mut sum = T::zero();
                let mut seen = 0usize;
                for (src, hs) in sources.iter().zip(&homographies) {
                    let q = hs[plane] * p;
                    if !(q.z > T::zero()) {
                        continue;
                    }
                    let (x, y) = (q.x / q.z, q.y / q.z);
                    let f = src.features;
                    let inside = x >= one
                        && y >= one
                        && x <= T::lit(f.width() as f64 - 2.0)
                        && y <= T::lit(f.height() as f64 - 2.0);
                    if !inside || !f.sample(x, y, &mut sample) {
                        continue;
                    }
                    let (dot, n2) = a.iter().zip(&sample).fold((T::zero(), T::zero()), |(d, n2), (&u, &v)| (d + u * v, n2 + v * v));
                    let cos = if n2 > T::zero() { dot / n2.sqrt() } else { T::zero() };
                    sum += one - cos;
                    seen += 1;
                }
                out[col * n + plane] = if seen > 0 { sum / T::lit(seen as f64) } else { T::infinity() };
            }
        }
    });
    Ok(CostVolume { width: w, height: h, planes: n, cost })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthParams {
    pub num_planes: usize,
    /// Minimum gap between the winning cost and the best cost more than two
    /// planes away. Pixels below it are ambiguous and marked invalid.
    pub min_margin: f64,
}

impl Default for DepthParams {
    fn default() -> Self {
        Self { num_planes: 128, min_margin: 0.005 }
    }
}

impl DepthParams {
    pub fn validate(&self) -> Result<(), DepthError> {
        if self.num_planes < 2 || !(self.min_margin >= 0.0) {
            return Err(DepthError::InvalidParameter(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Winner-take-all over planes with a parabola fit in inverse depth through
/// the winner and its neighbours.
pub fn extract_depth<T: Real>(cost: &CostVolume<T>, hyp: &DepthHypotheses<T>, params: &DepthParams) -> Result<DepthMap<T>, DepthError> {
    params.validate()?;
    if cost.planes != hyp.len() {
        return Err(DepthError::DimensionMismatch(format!("{} cost planes vs {} hypotheses", cost.planes, hyp.len())));
    }
    let n = cost.planes;
    let min_margin = T::lit(params.min_margin);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let depths: Vec<T> = (0..cost.width * cost.height)
        .into_par_iter()
        .map(|p| {
            let col = cost.column(p / cost.width, p % cost.width);
            let mut best = 0;
            for k in 1..n {
                if col[k] < col[best] {
                    best = k;
                }
            }
            let c = col[best];
            if !c.is_finite_real() {
                return T::zero();
            }
            let rival = col
                .iter()
                .enumerate()
                .filter(|(k, v)| k.abs_diff(best) > 2 && v.is_finite_real())
                .fold(T::infinity(), |m, (_, &v)| m.min(v));
            if rival.is_finite_real() && rival - c < min_margin {
                return T::zero();
            }
            if best == 0 || best + 1 == n {
                return hyp.planes()[best];
            }
            let (l, r) = (col[best - 1], col[best + 1]);
            if !(l.is_finite_real() && r.is_finite_real()) {
                return hyp.planes()[best];
            }
            let denom = l - two * c + r;
            if !(denom > T::zero()) {
                return hyp.planes()[best];
            }
            let delta = ((l - r) / (two * denom)).max(-half).min(half);
            if delta == T::zero() {
                return hyp.planes()[best];
            }
            let d = T::one() / hyp.inverse_at(T::lit(best as f64) + delta);
            let (lo, hi) = (hyp.planes()[best - 1], hyp.planes()[best + 1]);
            d.max(lo).min(hi)
        })
        .collect();
    DepthMap::from_depths(cost.width, cost.height, depths)?.with_range(hyp.range())
}
