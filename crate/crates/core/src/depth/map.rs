use nalgebra::{Vector2, Vector3};

use super::DepthError;
use crate::geom::CameraIntrinsics;
use crate::Real;

/// Sweep range and plane count that produced a depth map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisRange<T: Real> {
    pub d_min: T,
    pub d_max: T,
    pub num_planes: usize,
}

impl<T: Real> HypothesisRange<T> {
    pub fn validate(&self) -> Result<(), DepthError> {
        if !(self.d_min > T::zero() && self.d_max > self.d_min && self.d_max.is_finite_real() && self.num_planes >= 2) {
            return Err(DepthError::InvalidRange(format!(
                "d_min={} d_max={} planes={}",
                self.d_min, self.d_max, self.num_planes
            )));
        }
        Ok(())
    }

    /// Spacing between neighbouring planes in inverse depth.
    pub fn inverse_step(&self) -> T {
        (T::one() / self.d_min - T::one() / self.d_max) / T::lit((self.num_planes - 1) as f64)
    }

    /// Depth distance between neighbouring planes around depth `d`
    /// (`d² · Δ(1/d)` to first order).
    pub fn local_spacing(&self, d: T) -> T {
        d * d * self.inverse_step()
    }
}

/// Per-pixel depth (camera z) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T: Real> {
    width: usize,
    height: usize,
    depth: Vec<T>,
    valid: Vec<bool>,
    /// Present when the map comes out of a plane sweep.
    pub range: Option<HypothesisRange<T>>,
}

impl<T: Real> DepthMap<T> {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![T::zero(); width * height], valid: vec![false; width * height], range: None }
    }

    /// Builds a map; pixels are valid where the depth is finite and positive.
    pub fn from_depths(width: usize, height: usize, depth: Vec<T>) -> Result<Self, DepthError> {
        if depth.len() != width * height {
            return Err(DepthError::DimensionMismatch(format!(
                "depth map {height}x{width} needs {} values, got {}",
                width * height,
                depth.len()
            )));
        }
        let valid: Vec<bool> = depth.iter().map(|d| d.is_finite_real() && *d > T::zero()).collect();
        let depth = depth.into_iter().zip(&valid).map(|(d, &v)| if v { d } else { T::zero() }).collect();
        Ok(Self { width, height, depth, valid, range: None })
    }

    pub fn with_range(mut self, range: HypothesisRange<T>) -> Result<Self, DepthError> {
        range.validate()?;
        self.range = Some(range);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DepthError> {
        if let Some(r) = &self.range {
            r.validate()?;
            for (d, &v) in self.depth.iter().zip(&self.valid) {
                if v && !(*d >= r.d_min && *d <= r.d_max) {
                    return Err(DepthError::InvalidRange(format!("depth {d} outside [{}, {}]", r.d_min, r.d_max)));
                }
            }
        }
        if self.depth.iter().zip(&self.valid).any(|(d, &v)| v && !(d.is_finite_real() && *d > T::zero())) {
            return Err(DepthError::InvalidRange("non-positive valid depth".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Depth at `(row, col)` if valid.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        let i = row * self.width + col;
        self.valid[i].then(|| self.depth[i])
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, depth: Option<T>) {
        let i = row * self.width + col;
        match depth {
            Some(d) if d.is_finite_real() && d > T::zero() => {
                self.depth[i] = d;
                self.valid[i] = true;
            }
            _ => {
                self.depth[i] = T::zero();
                self.valid[i] = false;
            }
        }
    }

    pub fn depths(&self) -> &[T] {
        &self.depth
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Depth at a fractional pixel, interpolated bilinearly in inverse depth
    /// (exact for planar surfaces). Requires all four taps to be valid.
    pub fn sample(&self, px: &Vector2<T>) -> Option<T> {
        let (x, y) = (px.x, px.y);
        if !(x.as_f64() >= 0.0 && y.as_f64() >= 0.0 && x.as_f64() <= (self.width - 1) as f64 && y.as_f64() <= (self.height - 1) as f64) {
            return None;
        }
        let (xf, yf) = (x.floor(), y.floor());
        let (c0, r0) = (xf.as_f64() as usize, yf.as_f64() as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let (ax, ay) = (x - xf, y - yf);
        let one = T::one();
        let taps = [
            (r0, c0, (one - ax) * (one - ay)),
            (r0, c1, ax * (one - ay)),
            (r1, c0, (one - ax) * ay),
            (r1, c1, ax * ay),
        ];
        let mut inv = T::zero();
        for (r, c, w) in taps {
            if w == T::zero() {
                continue;
            }
            inv += w / self.get(r, c)?;
        }
        (inv > T::zero()).then(|| one / inv)
    }

    /// Back-projects every valid pixel into the camera frame.
    pub fn back_project(&self, k: &CameraIntrinsics<T>) -> Vec<Vector3<T>> {
        let mut out = Vec::with_capacity(self.valid_count());
        for r in 0..self.height {
            for c in 0..self.width {
                if let Some(d) = self.get(r, c) {
                    out.push(k.back_project(&Vector2::new(T::lit(c as f64), T::lit(r as f64)), d));
                }
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> DepthMap<U> {
        DepthMap {
            width: self.width,
            height: self.height,
            depth: self.depth.iter().map(|d| U::lit(d.as_f64())).collect(),
            valid: self.valid.clone(),
            range: self.range.map(|r| HypothesisRange {
                d_min: U::lit(r.d_min.as_f64()),
                d_max: U::lit(r.d_max.as_f64()),
                num_planes: r.num_planes,
            }),
        }
    }
}

/// Plane depths, uniformly spaced in inverse depth, increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses<T: Real> {
    planes: Vec<T>,
    range: HypothesisRange<T>,
}

impl<T: Real> DepthHypotheses<T> {
    pub fn inverse_uniform(d_min: T, d_max: T, num_planes: usize) -> Result<Self, DepthError> {
        let range = HypothesisRange { d_min, d_max, num_planes };
        range.validate()?;
        let step = range.inverse_step();
        let inv_near = T::one() / d_min;
        let mut planes: Vec<T> = (0..num_planes).map(|k| T::one() / (inv_near - step * T::lit(k as f64))).collect();
        planes[0] = d_min;
        planes[num_planes - 1] = d_max;
        if planes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DepthError::InvalidRange("planes are not strictly increasing".into()));
        }
        Ok(Self { planes, range })
    }

    pub fn planes(&self) -> &[T] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn range(&self) -> HypothesisRange<T> {
        self.range
    }

    /// Inverse depth at fractional plane index `k`.
    pub fn inverse_at(&self, k: T) -> T {
        T::one() / self.range.d_min - self.range.inverse_step() * k
    }
}
