use nalgebra::{Matrix4, Vector2, Vector3};

use super::{CameraIntrinsics, GeomError, Pose};
use crate::Real;

/// Minimum angle between the two viewing rays.
pub const MIN_TRIANGULATION_ANGLE: f64 = 1e-6;

/// A triangulated scene point in the reference-camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Point3<T: Real> {
    pub xyz: Vector3<T>,
    pub source_views: Vec<usize>,
}

/// Linear (DLT) triangulation for normalized coordinates with cameras
/// `[I | 0]` and `[R | T]`. Returns `None` for near-parallel rays or a point
/// at infinity.
pub fn triangulate_normalized<T: Real>(x: &Vector2<T>, x_prime: &Vector2<T>, pose: &Pose<T>) -> Option<Vector3<T>> {
    let ray_a = Vector3::new(x.x, x.y, T::one());
    let ray_b = pose.rotation.transpose() * Vector3::new(x_prime.x, x_prime.y, T::one());
    let angle = ray_a.cross(&ray_b).norm().atan2(ray_a.dot(&ray_b));
    if !(angle.abs() > T::lit(MIN_TRIANGULATION_ANGLE)) {
        return None;
    }
    let r = &pose.rotation;
    let t = &pose.translation;
    let (z, o) = (T::zero(), T::one());
    let p1 = [[o, z, z, z], [z, o, z, z], [z, z, o, z]];
    let p2 = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
    ];
    let mut a = Matrix4::<T>::zeros();
    for c in 0..4 {
        a[(0, c)] = x.x * p1[2][c] - p1[0][c];
        a[(1, c)] = x.y * p1[2][c] - p1[1][c];
        a[(2, c)] = x_prime.x * p2[2][c] - p2[0][c];
        a[(3, c)] = x_prime.y * p2[2][c] - p2[1][c];
    }
    // Row scaling does not move the null vector but evens out conditioning.
    for rrow in 0..4 {
        let n = a.row(rrow).norm();
        if n > T::zero() {
            a.row_mut(rrow).unscale_mut(n);
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let imin = (0..4).fold(0, |m, i| if svd.singular_values[i] < svd.singular_values[m] { i } else { m });
    let h = v_t.row(imin);
    if h[3].abs() < T::lit(1e-14) * h.norm() {
        return None;
    }
    let p = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    p.iter().all(|v| v.is_finite_real()).then_some(p)
}

/// Triangulates a pixel correspondence between the reference view and the
/// view at `pose` (both with intrinsics `k`).
pub fn triangulate<T: Real>(
    x: &Vector2<T>,
    x_prime: &Vector2<T>,
    k: &CameraIntrinsics<T>,
    pose: &Pose<T>,
) -> Result<Point3<T>, GeomError> {
    let xyz = triangulate_normalized(&k.normalize(x), &k.normalize(x_prime), pose).ok_or(GeomError::RaysParallel)?;
    Ok(Point3 { xyz, source_views: vec![0, 1] })
}
