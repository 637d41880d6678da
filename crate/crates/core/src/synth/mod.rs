//! Synthetic scenes with exact ground truth: analytic geometry, procedural
//! texture and ray-cast renders.
//!
//! The world frame is the camera frame of view 0 when that view has the
//! identity pose, which is how [`SyntheticScene::ring`] builds its rigs.

mod geometry;
mod texture;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::depth::DepthMap;
use crate::geom::{CameraIntrinsics, Pose};
use crate::matching::{FlowField, ImageBuffer, MatchError};

pub use geometry::Geometry;
pub use texture::Texture;

/// Relative tolerance of the occlusion depth test.
pub const OCCLUSION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("view index {index} out of range ({count} views)")]
    ViewIndexOutOfRange { index: usize, count: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Image(#[from] MatchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub geometry: Geometry,
    pub texture: Texture,
    /// Intrinsics and world-to-camera pose of each view.
    pub cameras: Vec<(CameraIntrinsics<f64>, Pose<f64>)>,
    pub seed: u64,
    /// Standard deviation of the optional pixel noise (0 disables it).
    pub noise_sigma: f64,
    /// Subsamples per pixel axis used for anti-aliasing.
    pub supersampling: usize,
    /// Intensity of rays that miss the geometry.
    pub background: f64,
}

/// Output of [`render`].
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: ImageBuffer<f64>,
    pub depth: DepthMap<f64>,
    pub pose: Pose<f64>,
}

/// World-to-camera pose of a camera at `center` looking at `target`, with
/// the camera y axis as close to world +y as possible.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Pose<f64> {
    let z = (target - center).normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose { rotation: r, translation: -(r * center) }
}

impl SyntheticScene {
    pub fn new(geometry: Geometry, cameras: Vec<(CameraIntrinsics<f64>, Pose<f64>)>, seed: u64) -> Self {
        Self {
            geometry,
            texture: Texture { seed, ..Texture::default() },
            cameras,
            seed,
            noise_sigma: 0.0,
            supersampling: 2,
            background: 0.5,
        }
    }

    /// View 0 at the origin with the identity pose; views `1..n` evenly spaced
    /// on a circle of radius `baseline` in the `z = 0` plane, all aimed at
    /// `target`.
    pub fn ring(geometry: Geometry, k: CameraIntrinsics<f64>, n_views: usize, baseline: f64, target: Vector3<f64>, seed: u64) -> Self {
        let mut cameras = vec![(k, Pose::identity())];
        for j in 1..n_views {
            let a = std::f64::consts::TAU * (j - 1) as f64 / (n_views - 1) as f64;
            let c = Vector3::new(baseline * a.cos(), baseline * a.sin(), 0.0);
            cameras.push((k, look_at(&c, &target)));
        }
        Self::new(geometry, cameras, seed)
    }

    pub fn view_count(&self) -> usize {
        self.cameras.len()
    }

    fn camera(&self, view: usize) -> Result<&(CameraIntrinsics<f64>, Pose<f64>), SynthError> {
        self.cameras.get(view).ok_or(SynthError::ViewIndexOutOfRange { index: view, count: self.cameras.len() })
    }

    /// Checks parameters and that every camera has at least half of the
    /// surface samples in its field of view.
    pub fn validate(&self) -> Result<(), SynthError> {
        self.geometry.validate().map_err(SynthError::InvalidScene)?;
        if self.cameras.is_empty() || self.supersampling == 0 || !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.background) {
            return Err(SynthError::InvalidScene("cameras, supersampling, noise or background out of range".into()));
        }
        let samples = self.geometry.surface_samples();
        for (i, (k, pose)) in self.cameras.iter().enumerate() {
            k.validate().map_err(|e| SynthError::InvalidScene(e.to_string()))?;
            let seen = samples
                .iter()
                .filter(|x| k.project_camera(&pose.transform_point(x)).is_ok_and(|p| k.contains(&p)))
                .count();
            if 2 * seen < samples.len() {
                return Err(SynthError::InvalidScene(format!("view {i} sees {seen} of {} surface samples", samples.len())));
            }
        }
        Ok(())
    }

    /// Ray parameter (= camera depth) of the surface seen through a
    /// fractional pixel of a view.
    pub fn depth_at(&self, view: usize, px: &Vector2<f64>) -> Result<Option<f64>, SynthError> {
        let (k, pose) = self.camera(view)?;
        Ok(cast_ray(&self.geometry, k, pose, px))
    }

    /// World point seen through a fractional pixel of a view.
    pub fn surface_point(&self, view: usize, px: &Vector2<f64>) -> Result<Option<Vector3<f64>>, SynthError> {
        let (k, pose) = self.camera(view)?;
        Ok(cast_ray(&self.geometry, k, pose, px).map(|d| pose.inverse().transform_point(&k.back_project(px, d))))
    }

    /// Ground-truth displacement of a fractional pixel from view `a` to
    /// view `b`; `None` when the surface is missed, leaves view `b` or is
    /// occluded there.
    pub fn flow_at(&self, a: usize, b: usize, px: &Vector2<f64>) -> Result<Option<Vector2<f64>>, SynthError> {
        let (ka, pa) = self.camera(a)?;
        let (kb, pb) = self.camera(b)?;
        let Some(d) = cast_ray(&self.geometry, ka, pa, px) else { return Ok(None) };
        let xa = ka.back_project(px, d);
        let xb = pb.compose(&pa.inverse()).transform_point(&xa);
        let Ok(q) = kb.project_camera(&xb) else { return Ok(None) };
        if !kb.contains(&q) {
            return Ok(None);
        }
        match cast_ray(&self.geometry, kb, pb, &q) {
            Some(db) if db >= xb.z * (1.0 - OCCLUSION_TOLERANCE) => Ok(Some(q - px)),
            _ => Ok(None),
        }
    }

    /// Back-projection of every `stride`-th pixel of every view's exact
    /// depth, in the world frame.
    pub fn ground_truth_cloud(&self, stride: usize) -> Result<Vec<Vector3<f64>>, SynthError> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for (k, pose) in &self.cameras {
            let inv = pose.inverse();
            for r in (0..k.height).step_by(stride) {
                for c in (0..k.width).step_by(stride) {
                    let px = Vector2::new(c as f64, r as f64);
                    if let Some(d) = cast_ray(&self.geometry, k, pose, &px) {
                        out.push(inv.transform_point(&k.back_project(&px, d)));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn cast_ray(g: &Geometry, k: &CameraIntrinsics<f64>, pose: &Pose<f64>, px: &Vector2<f64>) -> Option<f64> {
    let rt = pose.rotation.transpose();
    let origin = -(rt * pose.translation);
    // Camera-frame ray has z = 1, so the ray parameter is the camera depth.
    let dir = rt * k.ray(px);
    g.intersect(&origin, &dir)
}

/// Ray-casts one view: intensity image, exact depth and pose.
pub fn render(scene: &SyntheticScene, view: usize) -> Result<RenderedView, SynthError> {
    let (k, pose) = *scene.camera(view)?;
    let (w, h) = (k.width, k.height);
    let s = scene.supersampling.max(1);
    let inv = pose.inverse();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut img = Vec::with_capacity(w);
            let mut dep = Vec::with_capacity(w);
            for c in 0..w {
                let centre = Vector2::new(c as f64, r as f64);
                dep.push(cast_ray(&scene.geometry, &k, &pose, &centre).unwrap_or(0.0));
                let mut acc = 0.0;
                for sy in 0..s {
                    for sx in 0..s {
                        let px = centre
                            + Vector2::new((sx as f64 + 0.5) / s as f64 - 0.5, (sy as f64 + 0.5) / s as f64 - 0.5);
                        acc += match cast_ray(&scene.geometry, &k, &pose, &px) {
                            Some(d) => scene.texture.intensity(&inv.transform_point(&k.back_project(&px, d))),
                            None => scene.background,
                        };
                    }
                }
                let mut v = acc / (s * s) as f64;
                if scene.noise_sigma > 0.0 {
                    v += scene.noise_sigma * texture::gaussian(scene.seed, &[view as i64, r as i64, c as i64]);
                }
                img.push(v.clamp(0.0, 1.0));
            }
            (img, dep)
        })
        .collect();
    let (mut pixels, mut depths) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
    for (i, d) in rows {
        pixels.extend(i);
        depths.extend(d);
    }
    let image = ImageBuffer::new(w, h, 1, pixels)?;
    let depth = DepthMap::from_depths(w, h, depths).map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    Ok(RenderedView { image, depth, pose })
}

/// Exact flow from view `a` to view `b` at every pixel of view `a`.
pub fn ground_truth_flow(scene: &SyntheticScene, a: usize, b: usize) -> Result<FlowField<f64>, SynthError> {
    let (k, _) = *scene.camera(a)?;
    scene.camera(b)?;
    let (w, h) = (k.width, k.height);
    let cells: Vec<Option<Vector2<f64>>> = (0..w * h)
        .into_par_iter()
        .map(|i| scene.flow_at(a, b, &Vector2::new((i % w) as f64, (i / w) as f64)).ok().flatten())
        .collect();
    let valid = cells.iter().map(Option::is_some).collect();
    let flow = cells.into_iter().map(|f| f.unwrap_or_else(Vector2::zeros)).collect();
    Ok(FlowField::new(w, h, flow, valid)?)
}
