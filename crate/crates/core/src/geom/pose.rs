use nalgebra::{Matrix3, Rotation3, Vector3};

use super::GeomError;
use crate::Real;

/// Defect above which composed rotations are projected back onto SO(3).
pub const REORTHONORMALIZE_DEFECT: f64 = 1e-10;
/// Defect above which an input matrix is rejected rather than repaired.
pub const MAX_ACCEPTED_DEFECT: f64 = 1e-6;

/// Rigid transform mapping reference-frame points into a camera frame:
/// `X_cam = R · X_ref + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    /// Builds a pose, repairing rotations with a small orthonormality defect
    /// and rejecting anything that is not close to a proper rotation.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeomError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite_real()) {
            return Err(GeomError::NotARotation { defect: f64::INFINITY });
        }
        let defect = orthonormality_defect(&rotation).as_f64();
        let det = rotation.determinant().as_f64();
        if defect > MAX_ACCEPTED_DEFECT || (det - 1.0).abs() > MAX_ACCEPTED_DEFECT {
            return Err(GeomError::NotARotation { defect: defect.max((det - 1.0).abs()) });
        }
        let mut pose = Self { rotation, translation };
        if defect > REORTHONORMALIZE_DEFECT {
            pose.rotation = polar_rotation(&pose.rotation);
        }
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_axis_angle(axis_angle: &Vector3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation: Rotation3::new(*axis_angle).into_inner(),
            translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ rhs`: applies `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Self) -> Self {
        let mut out = Self {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        };
        if orthonormality_defect(&out.rotation).as_f64() > REORTHONORMALIZE_DEFECT {
            out.rotation = polar_rotation(&out.rotation);
        }
        out
    }

    /// Pose of this camera expressed relative to `base`'s camera frame, for
    /// two poses sharing a world frame.
    pub fn relative_to(&self, base: &Self) -> Self {
        self.compose(&base.inverse())
    }

    /// Camera centre in the reference frame.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|v| U::lit(v.as_f64())),
            translation: self.translation.map(|v| U::lit(v.as_f64())),
        }
    }
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_defect<T: Real>(r: &Matrix3<T>) -> T {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// Nearest rotation in the Frobenius sense (`U Vᵀ` of the SVD).
pub fn polar_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Angle of the relative rotation `a · bᵀ`, accurate for small angles.
pub fn rotation_angle<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    let d = a * b.transpose();
    let half = T::lit(0.5);
    let axis = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]) * half;
    let cos = (d.trace() - T::one()) * half;
    axis.norm().atan2(cos)
}

/// Angle between two directions, accurate for small angles.
pub fn direction_angle<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> T {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Rescales the translation to unit length; the rotation is untouched.
pub fn normalize_translation<T: Real>(pose: &Pose<T>) -> Result<Pose<T>, GeomError> {
    let n = pose.translation.norm();
    if !(n.as_f64() > 1e-12) {
        return Err(GeomError::ZeroTranslation);
    }
    Ok(Pose { rotation: pose.rotation, translation: pose.translation / n })
}
