use nalgebra::{Matrix3, Vector2, Vector3};

use super::{GeomError, Pose};
use crate::Real;

/// Pinhole calibration: focal lengths and principal point in pixels.
///
/// Pixel `(u, v)` denotes the centre of column `u`, row `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self, GeomError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let zero = T::zero();
        if !(self.fx > zero && self.fy > zero) || !self.fx.is_finite_real() || !self.fy.is_finite_real() {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let w = T::lit(self.width as f64);
        let h = T::lit(self.height as f64);
        if !(self.cx >= zero && self.cx < w && self.cy >= zero && self.cy < h) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn as_matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    pub fn inverse_matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(
            o / self.fx,
            z,
            -self.cx / self.fx,
            z,
            o / self.fy,
            -self.cy / self.fy,
            z,
            z,
            o,
        )
    }

    /// Pixel to normalized image coordinates (`K⁻¹ x`, dehomogenized).
    #[inline]
    pub fn normalize(&self, px: &Vector2<T>) -> Vector2<T> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    #[inline]
    pub fn denormalize(&self, n: &Vector2<T>) -> Vector2<T> {
        Vector2::new(n.x * self.fx + self.cx, n.y * self.fy + self.cy)
    }

    /// Viewing ray through a pixel, scaled so that its z component is 1.
    #[inline]
    pub fn ray(&self, px: &Vector2<T>) -> Vector3<T> {
        let n = self.normalize(px);
        Vector3::new(n.x, n.y, T::one())
    }

    /// Back-projects a pixel at the given depth (z) into the camera frame.
    #[inline]
    pub fn back_project(&self, px: &Vector2<T>, depth: T) -> Vector3<T> {
        self.ray(px) * depth
    }

    /// Projects a camera-frame point. Fails for points on or behind the
    /// image plane.
    #[inline]
    pub fn project_camera(&self, xc: &Vector3<T>) -> Result<Vector2<T>, GeomError> {
        if !(xc.z > T::zero()) {
            return Err(GeomError::DepthNonPositive);
        }
        Ok(Vector2::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        ))
    }

    #[inline]
    pub fn contains(&self, px: &Vector2<T>) -> bool {
        let half = T::lit(0.5);
        px.x >= -half
            && px.y >= -half
            && px.x < T::lit(self.width as f64) - half
            && px.y < T::lit(self.height as f64) - half
    }

    /// Intrinsics of a grid obtained by averaging `factor`×`factor` pixel
    /// blocks. Cell `(i, j)` of the coarse grid covers pixels
    /// `[factor·j, factor·(j+1))`, so its centre sits at `factor·j + (factor−1)/2`.
    pub fn downscaled(&self, factor: usize) -> Result<Self, GeomError> {
        if factor == 0 {
            return Err(GeomError::InvalidIntrinsics("downscale factor must be ≥ 1".into()));
        }
        let s = T::lit(factor as f64);
        let half = T::lit(0.5);
        let cx = (self.cx + half) / s - half;
        let cy = (self.cy + half) / s - half;
        Self::new(
            self.fx / s,
            self.fy / s,
            cx.max(T::zero()),
            cy.max(T::zero()),
            self.width / factor,
            self.height / factor,
        )
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Projects a reference-frame point `X` into the camera described by `pose`:
/// `x = K [R | T] X`, dehomogenized.
pub fn project<T: Real>(k: &CameraIntrinsics<T>, pose: &Pose<T>, x: &Vector3<T>) -> Result<Vector2<T>, GeomError> {
    k.project_camera(&pose.transform_point(x))
}
