use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HIT_EPS: f64 = 1e-9;

/// Analytic scene surface, expressed in the world frame (the frame of view 0).
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Square `|x|, |y| ≤ half_extent` on the plane `z = depth`.
    FrontoParallelPlane { depth: f64, half_extent: f64 },
    /// Square of side `2·half_extent` centred on `point`, facing `normal`.
    SlantedPlane { point: Vector3<f64>, normal: Vector3<f64>, half_extent: f64 },
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Union of small spheres.
    PointSet { centers: Vec<Vector3<f64>>, radius: f64 },
}

/// In-plane axes for a unit normal.
fn plane_axes(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let u = helper.cross(n).normalize();
    (u, n.cross(&u))
}

fn intersect_square(origin: &Vector3<f64>, dir: &Vector3<f64>, point: &Vector3<f64>, n: &Vector3<f64>, half: f64) -> Option<f64> {
    let denom = n.dot(dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = n.dot(&(point - origin)) / denom;
    if t <= HIT_EPS {
        return None;
    }
    let (u, v) = plane_axes(n);
    let rel = origin + dir * t - point;
    (rel.dot(&u).abs() <= half && rel.dot(&v).abs() <= half).then_some(t)
}

fn intersect_sphere(origin: &Vector3<f64>, dir: &Vector3<f64>, center: &Vector3<f64>, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let a = dir.norm_squared();
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Numerically stable roots.
    let q = -(b + b.signum() * s);
    let (r0, r1) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
    let (lo, hi) = if r0 < r1 { (r0, r1) } else { (r1, r0) };
    if lo > HIT_EPS {
        Some(lo)
    } else if hi > HIT_EPS {
        Some(hi)
    } else {
        None
    }
}

/// Fibonacci lattice of `n` unit directions.
fn fibonacci_sphere(n: usize) -> impl Iterator<Item = Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - y * y).sqrt();
        let th = golden * i as f64;
        Vector3::new(r * th.cos(), y, r * th.sin())
    })
}

impl Geometry {
    pub fn fronto_parallel(depth: f64, half_extent: f64) -> Self {
        Geometry::FrontoParallelPlane { depth, half_extent }
    }

    pub fn slanted(point: Vector3<f64>, normal: Vector3<f64>, half_extent: f64) -> Self {
        Geometry::SlantedPlane { point, normal: normal.normalize(), half_extent }
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Geometry::Sphere { center, radius }
    }

    /// `count` spheres of the given radius, uniformly placed in the box
    /// `center ± spread`.
    pub fn random_points(seed: u64, count: usize, center: Vector3<f64>, spread: f64, radius: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..count)
            .map(|_| {
                center
                    + Vector3::new(
                        rng.random_range(-spread..=spread),
                        rng.random_range(-spread..=spread),
                        rng.random_range(-spread..=spread),
                    )
            })
            .collect();
        Geometry::PointSet { centers, radius }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match self {
            Geometry::FrontoParallelPlane { depth, half_extent } => *depth > 0.0 && *half_extent > 0.0,
            Geometry::SlantedPlane { point, normal, half_extent } => {
                point.iter().all(|v| v.is_finite()) && (normal.norm() - 1.0).abs() < 1e-9 && *half_extent > 0.0
            }
            Geometry::Sphere { center, radius } => center.iter().all(|v| v.is_finite()) && *radius > 0.0,
            Geometry::PointSet { centers, radius } => !centers.is_empty() && *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid geometry {self:?}"))
        }
    }

    /// Smallest positive ray parameter at which `origin + t·dir` hits the surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Geometry::FrontoParallelPlane { depth, half_extent } => {
                intersect_square(origin, dir, &Vector3::new(0.0, 0.0, *depth), &Vector3::z(), *half_extent)
            }
            Geometry::SlantedPlane { point, normal, half_extent } => intersect_square(origin, dir, point, normal, *half_extent),
            Geometry::Sphere { center, radius } => intersect_sphere(origin, dir, center, *radius),
            Geometry::PointSet { centers, radius } => centers
                .iter()
                .filter_map(|c| intersect_sphere(origin, dir, c, *radius))
                .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t)))),
        }
    }

    /// Roughly uniform samples of the surface.
    pub fn surface_samples(&self) -> Vec<Vector3<f64>> {
        match self {
            Geometry::FrontoParallelPlane { depth, half_extent } => {
                square_grid(&Vector3::new(0.0, 0.0, *depth), &Vector3::x(), &Vector3::y(), *half_extent)
            }
            Geometry::SlantedPlane { point, normal, half_extent } => {
                let (u, v) = plane_axes(normal);
                square_grid(point, &u, &v, *half_extent)
            }
            Geometry::Sphere { center, radius } => fibonacci_sphere(2000).map(|d| center + d * *radius).collect(),
            Geometry::PointSet { centers, radius } => {
                centers.iter().flat_map(|c| fibonacci_sphere(32).map(move |d| c + d * *radius)).collect()
            }
        }
    }
}

fn square_grid(center: &Vector3<f64>, u: &Vector3<f64>, v: &Vector3<f64>, half: f64) -> Vec<Vector3<f64>> {
    let n = 40;
    let step = 2.0 * half / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let a = -half + (i as f64 + 0.5) * step;
            let b = -half + (j as f64 + 0.5) * step;
            out.push(center + u * a + v * b);
        }
    }
    out
}
