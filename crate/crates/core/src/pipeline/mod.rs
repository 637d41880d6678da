//! End-to-end driver: flow matching, pose recovery (unless calibrated
//! cameras are supplied), per-view plane sweep, fusion and optional
//! evaluation. Every stage writes its artifacts under the output directory
//! as it finishes, so a failed run leaves the completed stages on disk.
//!
//! Output layout:
//!
//! ```text
//! <out>/config.txt             effective configuration
//! <out>/flow/<ref>_<src>.flo   reference-to-source flow on the flow grid
//! <out>/cameras/<stem>.txt     camera used for each view
//! <out>/depth/<stem>.pfm       depth map (+ .meta sidecar, .png preview)
//! <out>/fused.ply              fused point cloud
//! <out>/manifest.txt           artifacts, stage timings and metrics
//! ```

mod bundle;
mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub use bundle::{write_bundle, Bundle, BundleError};
pub use config::PipelineConfig;

use crate::depth::{extract_depth, plane_sweep, DepthHypotheses, DepthMap, DepthParams, SourceView};
use crate::eval::{cloud_metrics, CloudMetrics};
use crate::fusion::{fuse, PointCloud, ViewDepth};
use crate::geom::{decompose_essential, ransac_essential, triangulate_normalized, CameraIntrinsics, EssentialMatrix, Match, Pose};
use crate::io;
use crate::matching::{extract_features, flow_to_matches, refine_matches, solve_flow, FeatureMap, FeatureParams, FlowField, ImageBuffer, MatchError};

/// Image extensions picked up from the input directory.
pub const IMAGE_EXTENSIONS: [&str; 7] = ["png", "tif", "tiff", "bmp", "pgm", "ppm", "pnm"];

/// Triangulated matches needed to derive a sweep range.
const MIN_RANGE_SAMPLES: usize = 16;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("reconstruct needs at least 2 input images, found {found} in {dir}")]
    TooFewImages { found: usize, dir: PathBuf },
    #[error("stage {stage} (views {views}): {source}")]
    Stage {
        stage: &'static str,
        views: String,
        #[source]
        source: BoxError,
    },
}

fn stage_err(stage: &'static str, views: &[usize]) -> impl Fn(BoxError) -> PipelineError {
    let views = views.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    move |source| PipelineError::Stage { stage, views: views.clone(), source }
}

fn boxed<E: std::error::Error + Send + Sync + 'static>(e: E) -> BoxError {
    Box::new(e)
}

/// What a run produced: artifact paths, wall-clock seconds per stage and
/// the evaluation, when ground truth was given.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub calibrated: bool,
    pub views: Vec<String>,
    pub depth_range: (f64, f64),
    pub artifacts: Vec<(String, PathBuf)>,
    pub timings: Vec<(String, f64)>,
    pub fused_points: usize,
    pub metrics: Option<CloudMetrics<f64>>,
}

impl RunManifest {
    pub fn to_records(&self) -> Vec<(String, String)> {
        let mut r = vec![
            ("mode".to_string(), if self.calibrated { "calibrated" } else { "uncalibrated" }.to_string()),
            ("views".to_string(), self.views.join(",")),
            ("depth.d_min".to_string(), format!("{:e}", self.depth_range.0)),
            ("depth.d_max".to_string(), format!("{:e}", self.depth_range.1)),
            ("fused_points".to_string(), self.fused_points.to_string()),
        ];
        r.extend(self.artifacts.iter().map(|(k, p)| (format!("artifact.{k}"), p.display().to_string())));
        r.extend(self.timings.iter().map(|(k, t)| (format!("time.{k}_s"), format!("{t:.6}"))));
        if let Some(m) = &self.metrics {
            r.push(("metrics.accuracy".into(), format!("{:e}", m.mean_accuracy)));
            r.push(("metrics.completeness".into(), format!("{:e}", m.mean_completeness)));
            r.push(("metrics.overall".into(), format!("{:e}", m.overall)));
        }
        r
    }
}

struct Timer {
    timings: Vec<(String, f64)>,
}

impl Timer {
    fn run<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.timings.push((stage.to_string(), t.elapsed().as_secs_f64()));
        r
    }
}

/// Sorted image paths in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, std::io::Error> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Descriptors of one view: on the flow grid and, when match refinement is
/// enabled, at full resolution.
pub struct ViewFeatures {
    pub flow: FeatureMap<f64>,
    pub full: Option<FeatureMap<f64>>,
}

pub fn view_features(img: &ImageBuffer<f64>, config: &PipelineConfig) -> Result<ViewFeatures, MatchError> {
    let flow = extract_features(img, &config.features)?;
    let full = if config.refine_radius > 0 {
        Some(extract_features(img, &FeatureParams { scale: 1, ..config.features })?)
    } else {
        None
    };
    Ok(ViewFeatures { flow, full })
}

/// Forward-backward checked flow from `a` to `b` and the full-resolution
/// matches it yields, refined when both views carry full descriptors.
pub fn match_pair(a: &ViewFeatures, b: &ViewFeatures, config: &PipelineConfig) -> Result<(FlowField<f64>, Vec<Match<f64>>), MatchError> {
    let fwd = solve_flow(&a.flow, &b.flow, &config.flow)?.flow;
    let bwd = solve_flow(&b.flow, &a.flow, &config.flow)?.flow;
    let flow = fwd.forward_backward_checked(&bwd, config.fb_max);
    let m = flow_to_matches(&flow, config.features.scale, config.match_stride)?;
    let m = match (&a.full, &b.full) {
        (Some(fa), Some(fb)) if config.refine_radius > 0 => refine_matches(fa, fb, &m, config.refine_radius)?,
        _ => m,
    };
    Ok((flow, m))
}

/// Runs the whole pipeline on a thread pool of `config.threads` workers.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(config))
}

fn run(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let out = &config.output;
    let mut timer = Timer { timings: Vec::new() };
    let mut artifacts = Vec::new();
    let total = Instant::now();

    std::fs::create_dir_all(out).map_err(|e| stage_err("setup", &[])(boxed(e)))?;
    let config_path = out.join("config.txt");
    config.write(&config_path)?;
    artifacts.push(("config".to_string(), config_path));

    // Inputs.
    let (paths, images, cameras) = timer.run("load", || load_inputs(config))?;
    let names: Vec<String> = paths.iter().map(|p| stem(p)).collect();
    let k = cameras[0].0;
    let calibrated = config.cameras.is_some();
    let n = images.len();

    // Flow from the reference view to every other view.
    let all: Vec<usize> = (0..n).collect();
    let feats: Vec<ViewFeatures> = timer.run("features", || {
        images
            .iter()
            .enumerate()
            .map(|(v, img)| view_features(img, config).map_err(|e| stage_err("features", &[v])(boxed(e))))
            .collect::<Result<_, _>>()
    })?;
    let matches: Vec<Vec<Match<f64>>> = timer.run("flow", || {
        (1..n)
            .map(|v| {
                let err = stage_err("flow", &[0, v]);
                let (flow, m) = match_pair(&feats[0], &feats[v], config).map_err(|e| err(boxed(e)))?;
                let path = out.join("flow").join(format!("{}_{}.flo", names[0], names[v]));
                io::write_flow(&path, &flow.cast()).map_err(|e| err(boxed(e)))?;
                artifacts.push((format!("flow.{}_{}", names[0], names[v]), path));
                Ok(m)
            })
            .collect::<Result<_, _>>()
    })?;
    drop(feats);

    // World-to-camera poses; the reference view defines the world frame when
    // poses are recovered.
    let (poses, inliers): PosesAndInliers = if calibrated {
        let poses: Vec<Pose<f64>> = cameras.iter().map(|c| c.1).collect();
        let inliers = epipolar_inliers(&matches, &poses, &k, config.ransac.threshold);
        (poses, inliers)
    } else {
        timer.run("pose", || recover_poses(&matches, &k, config))?
    };
    for (v, pose) in poses.iter().enumerate() {
        let path = out.join("cameras").join(format!("{}.txt", names[v]));
        io::write_camera(&path, &k, pose).map_err(|e| stage_err("pose", &[v])(boxed(e)))?;
        artifacts.push((format!("camera.{}", names[v]), path));
    }

    // Sweep range.
    let (d_min, d_max) = match config.depth_range {
        Some(r) => r,
        None => timer.run("range", || depth_range(&matches, &inliers, &poses, &k))?,
    };
    let hyp = DepthHypotheses::inverse_uniform(d_min, d_max, config.depth.num_planes)
        .map_err(|e| stage_err("depth", &[])(boxed(e)))?;

    // Per-view plane sweep against every other view.
    let depth_params = FeatureParams { scale: config.depth_scale, ..config.features };
    let k_depth = k.downscaled(config.depth_scale).map_err(|e| stage_err("depth", &[])(boxed(e)))?;
    let depths: Vec<DepthMap<f64>> = timer.run("depth", || {
        let feats: Vec<FeatureMap<f64>> = images
            .iter()
            .enumerate()
            .map(|(v, img)| extract_features(img, &depth_params).map_err(|e| stage_err("depth", &[v])(boxed(e))))
            .collect::<Result<_, _>>()?;
        (0..n)
            .map(|r| {
                let err = stage_err("depth", &[r]);
                let sources: Vec<SourceView<f64>> = (0..n)
                    .filter(|&s| s != r)
                    .map(|s| SourceView { features: &feats[s], pose: poses[s].relative_to(&poses[r]) })
                    .collect();
                let map = sweep_view(&feats[r], &sources, &k_depth, &hyp, &config.depth).map_err(|e| err(boxed(e)))?;
                let path = out.join("depth").join(format!("{}.pfm", names[r]));
                io::write_depth(&path, &map, Some(&path.with_extension("png"))).map_err(|e| err(boxed(e)))?;
                artifacts.push((format!("depth.{}", names[r]), path));
                Ok(map)
            })
            .collect::<Result<_, _>>()
    })?;

    // Fusion.
    let cloud: PointCloud<f64> = timer.run("fusion", || {
        let views: Vec<ViewDepth<f64>> =
            depths.iter().enumerate().map(|(id, depth)| ViewDepth { id, depth, pose: poses[id] }).collect();
        fuse(&views, &k_depth, &config.fusion).map_err(|e| stage_err("fusion", &all)(boxed(e)))
    })?;
    let ply_path = out.join("fused.ply");
    io::write_ply(&ply_path, &cloud.cast(), config.ply_format).map_err(|e| stage_err("fusion", &all)(boxed(e)))?;
    artifacts.push(("fused".to_string(), ply_path));

    // Evaluation.
    let metrics = match &config.ground_truth {
        Some(gt_path) => Some(timer.run("eval", || {
            let err = stage_err("eval", &[]);
            let gt = io::read_ply(gt_path).map_err(|e| err(boxed(e)))?.cast::<f64>();
            cloud_metrics(&cloud, &gt, config.eval_max_dist).map_err(|e| err(boxed(e)))
        })?),
        None => None,
    };

    timer.timings.push(("total".to_string(), total.elapsed().as_secs_f64()));
    let manifest = RunManifest {
        calibrated,
        views: names,
        depth_range: (d_min, d_max),
        artifacts,
        timings: timer.timings,
        fused_points: cloud.len(),
        metrics,
    };
    let manifest_path = out.join("manifest.txt");
    let mut records = manifest.to_records();
    records.push(("artifact.manifest".into(), manifest_path.display().to_string()));
    io::write_key_values(&manifest_path, &records).map_err(|e| stage_err("manifest", &[])(boxed(e)))?;
    Ok(manifest)
}

/// World-to-camera poses and, per reference pair, the match inlier mask.
type PosesAndInliers = (Vec<Pose<f64>>, Vec<Vec<bool>>);

type Inputs = (Vec<PathBuf>, Vec<ImageBuffer<f64>>, Vec<(CameraIntrinsics<f64>, Pose<f64>)>);

fn load_inputs(config: &PipelineConfig) -> Result<Inputs, PipelineError> {
    let paths = list_images(&config.images).map_err(|e| stage_err("load", &[])(boxed(e)))?;
    if paths.len() < 2 {
        return Err(PipelineError::TooFewImages { found: paths.len(), dir: config.images.clone() });
    }
    let images: Vec<ImageBuffer<f64>> = paths
        .iter()
        .enumerate()
        .map(|(v, p)| io::load_image(p).map_err(|e| stage_err("load", &[v])(boxed(e))))
        .collect::<Result<_, _>>()?;
    let (w, h) = (images[0].width(), images[0].height());
    if let Some(v) = images.iter().position(|i| i.width() != w || i.height() != h) {
        return Err(stage_err("load", &[v])(
            format!("image is {}x{}, reference is {w}x{h}", images[v].width(), images[v].height()).into(),
        ));
    }
    let cameras: Vec<(CameraIntrinsics<f64>, Pose<f64>)> = match (&config.cameras, &config.intrinsics) {
        (Some(dir), _) => paths
            .iter()
            .enumerate()
            .map(|(v, p)| io::read_camera(&dir.join(format!("{}.txt", stem(p)))).map_err(|e| stage_err("load", &[v])(boxed(e))))
            .collect::<Result<_, _>>()?,
        (None, Some(file)) => {
            let (k, _) = io::read_camera(file).map_err(|e| stage_err("load", &[])(boxed(e)))?;
            vec![(k, Pose::identity()); paths.len()]
        }
        (None, None) => return Err(PipelineError::Config("either input.cameras or input.intrinsics is required".into())),
    };
    for (v, (k, _)) in cameras.iter().enumerate() {
        if k.width != w || k.height != h {
            return Err(stage_err("load", &[v])(format!("camera is {}x{}, images are {w}x{h}", k.width, k.height).into()));
        }
        if *k != cameras[0].0 {
            return Err(stage_err("load", &[v])("all views must share the reference intrinsics".into()));
        }
    }
    Ok((paths, images, cameras))
}

/// Relative pose of one view pair recovered from its matches.
#[derive(Debug, Clone)]
pub struct PairPose {
    /// Source camera relative to the reference, with a unit baseline.
    pub pose: Pose<f64>,
    pub inliers: Vec<bool>,
    /// Median reference-view depth of the triangulated inliers.
    pub median_depth: f64,
}

/// Five-point RANSAC, cheirality decomposition and triangulation of the
/// inliers of one pair.
pub fn relative_pose(matches: &[Match<f64>], k: &CameraIntrinsics<f64>, config: &PipelineConfig) -> Result<PairPose, BoxError> {
    let params = crate::geom::RansacParams { seed: config.seed, ..config.ransac };
    let fit = ransac_essential(matches, k, &params)?;
    let kept: Vec<Match<f64>> = matches.iter().zip(&fit.inliers).filter(|(_, &ok)| ok).map(|(m, _)| *m).collect();
    let pose = decompose_essential(&fit.essential, &kept, k)?;
    let mut z = triangulated_depths(&kept, &pose, k);
    if z.len() < MIN_RANGE_SAMPLES {
        return Err(format!("only {} triangulated inliers", z.len()).into());
    }
    z.sort_by(f64::total_cmp);
    Ok(PairPose { pose, inliers: fit.inliers, median_depth: z[z.len() / 2] })
}

/// Relative poses between the reference and each other view. Each pair
/// comes out with a unit baseline; pairs after the first are rescaled so
/// that the median reference-view depth of their triangulated inliers
/// matches that of the first pair.
fn recover_poses(
    matches: &[Vec<Match<f64>>],
    k: &CameraIntrinsics<f64>,
    config: &PipelineConfig,
) -> Result<PosesAndInliers, PipelineError> {
    let mut poses = vec![Pose::identity()];
    let mut inliers = Vec::new();
    let mut reference_median = None;
    for (i, m) in matches.iter().enumerate() {
        let fit = relative_pose(m, k, config).map_err(stage_err("pose", &[0, i + 1]))?;
        let mut pose = fit.pose;
        match reference_median {
            None => reference_median = Some(fit.median_depth),
            Some(base) => pose = Pose { rotation: pose.rotation, translation: pose.translation * (base / fit.median_depth) },
        }
        poses.push(pose);
        inliers.push(fit.inliers);
    }
    Ok((poses, inliers))
}

/// Reference-view depths of matches triangulated in front of both cameras.
fn triangulated_depths(matches: &[Match<f64>], rel: &Pose<f64>, k: &CameraIntrinsics<f64>) -> Vec<f64> {
    matches
        .iter()
        .filter_map(|mm| {
            let x = triangulate_normalized(&k.normalize(&mm.x), &k.normalize(&mm.x_prime), rel)?;
            (x.z > 0.0 && x.z.is_finite() && rel.transform_point(&x).z > 0.0).then_some(x.z)
        })
        .collect()
}

/// Matches whose Sampson distance under the known relative pose is below
/// `threshold` (normalized image units).
fn epipolar_inliers(matches: &[Vec<Match<f64>>], poses: &[Pose<f64>], k: &CameraIntrinsics<f64>, threshold: f64) -> Vec<Vec<bool>> {
    matches
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let e = EssentialMatrix::from_pose(&poses[i + 1].relative_to(&poses[0]));
            m.iter().map(|mm| e.sampson_distance(&k.normalize(&mm.x), &k.normalize(&mm.x_prime)) < threshold).collect()
        })
        .collect()
}

/// `[0.5·p5, 2·p95]` of the reference-view depths of triangulated inlier
/// matches.
fn depth_range(
    matches: &[Vec<Match<f64>>],
    inliers: &[Vec<bool>],
    poses: &[Pose<f64>],
    k: &CameraIntrinsics<f64>,
) -> Result<(f64, f64), PipelineError> {
    let mut z: Vec<f64> = Vec::new();
    for (i, (m, ok)) in matches.iter().zip(inliers).enumerate() {
        let kept: Vec<Match<f64>> = m.iter().zip(ok).filter(|(_, &ok)| ok).map(|(mm, _)| *mm).collect();
        z.extend(triangulated_depths(&kept, &poses[i + 1].relative_to(&poses[0]), k));
    }
    if z.len() < MIN_RANGE_SAMPLES {
        return Err(stage_err("range", &[])(
            format!("only {} triangulated matches; set depth.d_min and depth.d_max", z.len()).into(),
        ));
    }
    z.sort_by(f64::total_cmp);
    let pct = |q: f64| z[((z.len() - 1) as f64 * q).round() as usize];
    Ok((0.5 * pct(0.05), 2.0 * pct(0.95)))
}

/// Plane sweep of one reference view against its sources followed by
/// winner-take-all extraction.
pub fn sweep_view(
    reference: &FeatureMap<f64>,
    sources: &[SourceView<'_, f64>],
    k: &CameraIntrinsics<f64>,
    hyp: &DepthHypotheses<f64>,
    params: &DepthParams,
) -> Result<DepthMap<f64>, crate::depth::DepthError> {
    let cost = plane_sweep(reference, sources, k, hyp)?;
    extract_depth(&cost, hyp, params)
}
