//! Essential matrices: the five-point minimal solver and decomposition into
//! a relative pose.
//!
//! The solver follows the nullspace / Gröbner-basis formulation: the five
//! epipolar constraints leave a four-dimensional nullspace
//! `E = x·X + y·Y + z·Z + W`; the determinant and trace constraints give ten
//! cubic equations in `(x, y, z)`. Eliminating the ten cubic monomials leaves
//! a ten-dimensional quotient basis on which multiplication by `x` acts
//! linearly. The real eigenvalues of that action matrix are the roots.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector2, Vector3};

use super::triangulate::triangulate_normalized;
use super::{CameraIntrinsics, GeomError, Match, Pose};
use crate::Real;

/// 3×3 essential matrix, stored with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix<T: Real> {
    pub e: Matrix3<T>,
}

impl<T: Real> EssentialMatrix<T> {
    /// Wraps a matrix, rescaling it to unit Frobenius norm.
    pub fn from_matrix(e: Matrix3<T>) -> Self {
        let n = e.norm();
        Self { e: if n > T::zero() { e / n } else { e } }
    }

    /// `[T]× R` for a pose `X₂ = R X₁ + T`.
    pub fn from_pose(pose: &Pose<T>) -> Self {
        Self::from_matrix(skew(&pose.translation) * pose.rotation)
    }

    /// Algebraic residual `x̂'ᵀ E x̂` for normalized image coordinates.
    #[inline]
    pub fn residual(&self, x: &Vector2<T>, x_prime: &Vector2<T>) -> T {
        let a = Vector3::new(x.x, x.y, T::one());
        let b = Vector3::new(x_prime.x, x_prime.y, T::one());
        b.dot(&(self.e * a))
    }

    /// First-order geometric (Sampson) distance in normalized units.
    #[inline]
    pub fn sampson_distance(&self, x: &Vector2<T>, x_prime: &Vector2<T>) -> T {
        let a = Vector3::new(x.x, x.y, T::one());
        let b = Vector3::new(x_prime.x, x_prime.y, T::one());
        let ea = self.e * a;
        let etb = self.e.transpose() * b;
        let r = b.dot(&ea);
        let denom = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
        if denom <= T::zero() {
            return T::infinity();
        }
        r.abs() / denom.sqrt()
    }

    /// Residuals of `det(E) = 0` and `2EEᵀE − tr(EEᵀ)E = 0` (largest entry).
    pub fn constraint_defect(&self) -> (T, T) {
        let e = self.e;
        let eet = e * e.transpose();
        let cubic = eet * e * T::lit(2.0) - e * eet.trace();
        (e.determinant().abs(), cubic.abs().max())
    }

    /// Angle between the two matrices viewed as unit 9-vectors, ignoring sign.
    pub fn angular_distance(&self, other: &Self) -> T {
        let a = self.e / self.e.norm();
        let b = other.e / other.e.norm();
        let two = T::lit(2.0);
        let d = (a - b).norm().min((a + b).norm());
        two * (d / two).min(T::one()).asin()
    }
}

pub fn skew<T: Real>(t: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -t.z, t.y, t.z, z, -t.x, -t.y, t.x, z)
}

// Monomials of degree ≤ 3 in (x, y, z). The ten cubics come first: they are
// eliminated, and the remaining ten form the quotient basis.
const MONOMIALS: [(u8, u8, u8); 20] = [
    (3, 0, 0),
    (2, 1, 0),
    (2, 0, 1),
    (1, 2, 0),
    (1, 1, 1),
    (1, 0, 2),
    (0, 3, 0),
    (0, 2, 1),
    (0, 1, 2),
    (0, 0, 3),
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];

const fn monomial_index(a: u8, b: u8, c: u8) -> usize {
    let mut i = 0;
    while i < MONOMIALS.len() {
        let m = MONOMIALS[i];
        if m.0 == a && m.1 == b && m.2 == c {
            return i;
        }
        i += 1;
    }
    panic!("monomial degree exceeds 3");
}

#[derive(Clone, Copy)]
struct Poly<T: Real>([T; 20]);

impl<T: Real> Poly<T> {
    fn zero() -> Self {
        Self([T::zero(); 20])
    }

    fn linear(x: T, y: T, z: T, w: T) -> Self {
        let mut p = Self::zero();
        p.0[monomial_index(1, 0, 0)] = x;
        p.0[monomial_index(0, 1, 0)] = y;
        p.0[monomial_index(0, 0, 1)] = z;
        p.0[monomial_index(0, 0, 0)] = w;
        p
    }

    fn mul(&self, rhs: &Self) -> Self {
        let mut out = Self::zero();
        for (i, &a) in self.0.iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            let ma = MONOMIALS[i];
            for (j, &b) in rhs.0.iter().enumerate() {
                if b == T::zero() {
                    continue;
                }
                let mb = MONOMIALS[j];
                let k = monomial_index(ma.0 + mb.0, ma.1 + mb.1, ma.2 + mb.2);
                out.0[k] += a * b;
            }
        }
        out
    }

    fn add(&self, rhs: &Self) -> Self {
        let mut out = *self;
        for (o, r) in out.0.iter_mut().zip(rhs.0.iter()) {
            *o += *r;
        }
        out
    }

    fn scale(&self, s: T) -> Self {
        let mut out = *self;
        out.0.iter_mut().for_each(|v| *v *= s);
        out
    }

    fn eval(&self, p: &Vector3<T>) -> T {
        let mut acc = T::zero();
        for (c, m) in self.0.iter().zip(MONOMIALS.iter()) {
            acc += *c * powi(p.x, m.0) * powi(p.y, m.1) * powi(p.z, m.2);
        }
        acc
    }

    fn gradient(&self, p: &Vector3<T>) -> Vector3<T> {
        let mut g = Vector3::zeros();
        for (c, m) in self.0.iter().zip(MONOMIALS.iter()) {
            let (a, b, d) = *m;
            if a > 0 {
                g.x += *c * T::lit(a as f64) * powi(p.x, a - 1) * powi(p.y, b) * powi(p.z, d);
            }
            if b > 0 {
                g.y += *c * T::lit(b as f64) * powi(p.x, a) * powi(p.y, b - 1) * powi(p.z, d);
            }
            if d > 0 {
                g.z += *c * T::lit(d as f64) * powi(p.x, a) * powi(p.y, b) * powi(p.z, d - 1);
            }
        }
        g
    }
}

#[inline]
fn powi<T: Real>(v: T, e: u8) -> T {
    match e {
        0 => T::one(),
        1 => v,
        2 => v * v,
        _ => v * v * v,
    }
}

/// Ten cubic constraints on `E(x, y, z) = xX + yY + zZ + W`.
fn cubic_constraints<T: Real>(basis: &[Matrix3<T>; 4]) -> [Poly<T>; 10] {
    let [bx, by, bz, bw] = basis;
    let e: [[Poly<T>; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| Poly::linear(bx[(i, j)], by[(i, j)], bz[(i, j)], bw[(i, j)]))
    });

    let mut out = [Poly::zero(); 10];
    let minor = |r1: usize, c1: usize, r2: usize, c2: usize| e[r1][c1].mul(&e[r2][c2]).add(&e[r1][c2].mul(&e[r2][c1]).scale(-T::one()));
    out[0] = e[0][0]
        .mul(&minor(1, 1, 2, 2))
        .add(&e[0][1].mul(&minor(1, 0, 2, 2)).scale(-T::one()))
        .add(&e[0][2].mul(&minor(1, 0, 2, 1)));

    // EEᵀ (quadratic entries) and its trace.
    let eet: [[Poly<T>; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| (0..3).fold(Poly::zero(), |acc, k| acc.add(&e[i][k].mul(&e[j][k]))))
    });
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    let two = T::lit(2.0);
    for i in 0..3 {
        for j in 0..3 {
            let mut p = (0..3).fold(Poly::zero(), |acc, k| acc.add(&eet[i][k].mul(&e[k][j]))).scale(two);
            p = p.add(&trace.mul(&e[i][j]).scale(-T::one()));
            out[1 + 3 * i + j] = p;
        }
    }
    out
}

/// Solves the five-point problem for normalized correspondences.
///
/// Returns every real solution with unit Frobenius norm (up to ten).
pub fn five_point_normalized<T: Real>(
    x: &[Vector2<T>; 5],
    x_prime: &[Vector2<T>; 5],
) -> Result<Vec<EssentialMatrix<T>>, GeomError> {
    // Epipolar constraint rows, padded to 9×9 so the SVD yields a full V.
    let mut q = SMatrix::<T, 9, 9>::zeros();
    for r in 0..5 {
        let a = [x[r].x, x[r].y, T::one()];
        let b = [x_prime[r].x, x_prime[r].y, T::one()];
        for i in 0..3 {
            for j in 0..3 {
                q[(r, 3 * i + j)] = b[i] * a[j];
            }
        }
    }
    let svd = q.svd(false, true);
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
    let s_max = svd.singular_values[order[0]];
    if !(s_max > T::zero()) || svd.singular_values[order[4]] / s_max < T::lit(1e-10) {
        return Err(GeomError::DegenerateConfiguration);
    }
    let basis: [Matrix3<T>; 4] = std::array::from_fn(|k| {
        let row = v_t.row(order[5 + k]);
        Matrix3::from_fn(|i, j| row[3 * i + j])
    });

    let polys = cubic_constraints(&basis);
    let mut c = DMatrix::<T>::zeros(10, 20);
    for (r, p) in polys.iter().enumerate() {
        for k in 0..20 {
            c[(r, k)] = p.0[k];
        }
    }
    let a = c.columns(0, 10).into_owned();
    let b = c.columns(10, 10).into_owned();
    let reduced = a.full_piv_lu().solve(&b).ok_or(GeomError::DegenerateConfiguration)?;

    // Action matrix of multiplication by x on the quotient basis
    // [x², xy, xz, y², yz, z², x, y, z, 1].
    let mut action = DMatrix::<T>::zeros(10, 10);
    let cubic_rows = [
        monomial_index(3, 0, 0),
        monomial_index(2, 1, 0),
        monomial_index(2, 0, 1),
        monomial_index(1, 2, 0),
        monomial_index(1, 1, 1),
        monomial_index(1, 0, 2),
    ];
    for (row, &ci) in cubic_rows.iter().enumerate() {
        for k in 0..10 {
            action[(row, k)] = -reduced[(ci, k)];
        }
    }
    // x·x = x², x·y = xy, x·z = xz, x·1 = x.
    for (row, target) in [(6usize, 0usize), (7, 1), (8, 2), (9, 6)] {
        action[(row, target)] = T::one();
    }

    let eigenvalues = action.clone().complex_eigenvalues();
    let mut out: Vec<EssentialMatrix<T>> = Vec::new();
    for ev in eigenvalues.iter() {
        let scale = T::one() + ev.re.abs();
        if ev.im.abs() > T::lit(1e-6) * scale {
            continue;
        }
        let lambda = ev.re;
        let mut shifted = action.clone();
        for d in 0..10 {
            shifted[(d, d)] -= lambda;
        }
        let svd = shifted.svd(false, true);
        let Some(v_t) = svd.v_t else { continue };
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, T::infinity()), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let v = v_t.row(imin);
        if v[9].abs() < T::lit(1e-12) {
            continue;
        }
        let mut p = Vector3::new(v[6] / v[9], v[7] / v[9], v[8] / v[9]);
        polish_root(&polys, &mut p);
        let e = basis[0] * p.x + basis[1] * p.y + basis[2] * p.z + basis[3];
        if !e.iter().all(|v| v.is_finite_real()) {
            continue;
        }
        let cand = EssentialMatrix::from_matrix(e);
        if out.iter().all(|o| o.angular_distance(&cand) > T::lit(1e-9)) {
            out.push(cand);
        }
    }
    Ok(out)
}

/// A few Gauss–Newton steps on the ten cubic equations; a step is kept only
/// when it lowers the residual.
fn polish_root<T: Real>(polys: &[Poly<T>; 10], p: &mut Vector3<T>) {
    let residual = |p: &Vector3<T>| polys.iter().map(|q| {
        let v = q.eval(p);
        v * v
    }).fold(T::zero(), |a, b| a + b);
    let mut best = residual(p);
    for _ in 0..4 {
        let mut jtj = Matrix3::<T>::zeros();
        let mut jtr = Vector3::<T>::zeros();
        for q in polys {
            let g = q.gradient(p);
            let r = q.eval(p);
            jtj += g * g.transpose();
            jtr += g * r;
        }
        let Some(step) = jtj.lu().solve(&jtr) else { break };
        let cand = *p - step;
        let r = residual(&cand);
        if r < best {
            best = r;
            *p = cand;
        } else {
            break;
        }
    }
}

/// Five-point estimate from exactly five pixel matches sharing intrinsics `k`.
pub fn estimate_essential_five_point<T: Real>(
    matches: &[Match<T>],
    k: &CameraIntrinsics<T>,
) -> Result<Vec<EssentialMatrix<T>>, GeomError> {
    if matches.len() != 5 {
        return Err(GeomError::InsufficientMatches { got: matches.len(), need: 5 });
    }
    let x: [Vector2<T>; 5] = std::array::from_fn(|i| k.normalize(&matches[i].x));
    let xp: [Vector2<T>; 5] = std::array::from_fn(|i| k.normalize(&matches[i].x_prime));
    five_point_normalized(&x, &xp)
}

/// The four `(R, T)` factorizations of an essential matrix, `T` unit norm.
pub fn pose_candidates<T: Real>(e: &EssentialMatrix<T>) -> [Pose<T>; 4] {
    let svd = e.e.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let mut v_t = svd.v_t.expect("svd v_t");
    // Columns are not guaranteed to be ordered; put the null direction last.
    let s = svd.singular_values;
    let null = (0..3).fold(0, |m, i| if s[i] < s[m] { i } else { m });
    if null != 2 {
        u.swap_columns(null, 2);
        v_t.swap_rows(null, 2);
    }
    if u.determinant() < T::zero() {
        u.neg_mut();
    }
    if v_t.determinant() < T::zero() {
        v_t.neg_mut();
    }
    let (z, o) = (T::zero(), T::one());
    let w = Matrix3::new(z, -o, z, o, z, z, z, z, o);
    let ra = u * w * v_t;
    let rb = u * w.transpose() * v_t;
    let t: Vector3<T> = u.column(2).into_owned();
    let t = t / t.norm();
    [
        Pose { rotation: ra, translation: t },
        Pose { rotation: ra, translation: -t },
        Pose { rotation: rb, translation: t },
        Pose { rotation: rb, translation: -t },
    ]
}

/// Number of normalized matches that triangulate in front of both cameras.
pub fn cheirality_count<T: Real>(pose: &Pose<T>, normalized: &[(Vector2<T>, Vector2<T>)]) -> usize {
    normalized
        .iter()
        .filter(|(a, b)| match triangulate_normalized(a, b, pose) {
            Some(x) => x.z > T::zero() && pose.transform_point(&x).z > T::zero(),
            None => false,
        })
        .count()
}

/// Recovers `(R, T)` with unit `T` from an essential matrix by cheirality
/// voting. A tie for the best count is an error.
pub fn decompose_essential<T: Real>(
    e: &EssentialMatrix<T>,
    matches: &[Match<T>],
    k: &CameraIntrinsics<T>,
) -> Result<Pose<T>, GeomError> {
    if matches.is_empty() {
        return Err(GeomError::InsufficientMatches { got: 0, need: 1 });
    }
    let normalized: Vec<_> = matches.iter().map(|m| (k.normalize(&m.x), k.normalize(&m.x_prime))).collect();
    let candidates = pose_candidates(e);
    let counts: Vec<usize> = candidates.iter().map(|p| cheirality_count(p, &normalized)).collect();
    let best = *counts.iter().max().expect("four candidates");
    if counts.iter().filter(|&&c| c == best).count() > 1 {
        return Err(GeomError::CheiralityAmbiguous { best });
    }
    let idx = counts.iter().position(|&c| c == best).expect("max exists");
    Pose::new(candidates[idx].rotation, candidates[idx].translation)
}
