use std::path::{Path, PathBuf};

use crate::fusion::PointCloud;
use crate::io::{self, IoError, PlyFormat};
use crate::synth::{render, SynthError, SyntheticScene};

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Paths of a written synthetic bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub images: PathBuf,
    pub cameras: PathBuf,
    pub depth: PathBuf,
    pub ground_truth: PathBuf,
}

impl Bundle {
    pub fn at(dir: &Path) -> Self {
        Self {
            images: dir.join("images"),
            cameras: dir.join("cameras"),
            depth: dir.join("depth_gt"),
            ground_truth: dir.join("ground_truth.ply"),
        }
    }
}

/// Renders every view of `scene` into `dir`: 16-bit PNG images, camera
/// files, exact depth maps and the ground-truth cloud sampled every
/// `gt_stride` pixels.
pub fn write_bundle(scene: &SyntheticScene, dir: &Path, gt_stride: usize) -> Result<Bundle, BundleError> {
    scene.validate()?;
    let b = Bundle::at(dir);
    for v in 0..scene.view_count() {
        let name = format!("view_{v:03}");
        let r = render(scene, v)?;
        io::save_image_png16(&b.images.join(format!("{name}.png")), &r.image)?;
        io::write_camera(&b.cameras.join(format!("{name}.txt")), &scene.cameras[v].0, &r.pose)?;
        io::write_depth(&b.depth.join(format!("{name}.pfm")), &r.depth, None)?;
    }
    let gt = PointCloud::from_positions(scene.ground_truth_cloud(gt_stride)?, 0);
    io::write_ply(&b.ground_truth, &gt.cast(), PlyFormat::BinaryLittleEndian)?;
    Ok(b)
}
