use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::PipelineError;
use crate::depth::{DepthParams, HypothesisRange};
use crate::fusion::FusionParams;
use crate::geom::RansacParams;
use crate::io::{self, PlyFormat};
use crate::matching::{FeatureParams, FlowParams};

/// Everything a `reconstruct` run needs. Serialised as `key=value` lines;
/// [`PipelineConfig::to_records`] lists every key with its current value.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Directory of input images, taken in file-name order. The first one
    /// is the reference view.
    pub images: PathBuf,
    /// Directory of camera files named `<image stem>.txt`. When set the
    /// poses are used as given and pose recovery is skipped.
    pub cameras: Option<PathBuf>,
    /// Camera file whose intrinsics are used when `cameras` is not set.
    pub intrinsics: Option<PathBuf>,
    /// Ground-truth PLY in the world frame of the cameras, for evaluation.
    pub ground_truth: Option<PathBuf>,
    pub output: PathBuf,
    pub ply_format: PlyFormat,
    pub seed: u64,
    /// Worker threads; 0 picks the number of cores.
    pub threads: usize,
    /// Descriptor parameters of the flow stage (`scale` is the flow grid).
    pub features: FeatureParams,
    pub flow: FlowParams,
    /// Grid stride of the matches taken from each flow field.
    pub match_stride: usize,
    /// Forward-backward round-trip tolerance in flow-grid cells.
    pub fb_max: f64,
    /// Search radius in pixels of the full-resolution match refinement;
    /// 0 keeps the flow-grid matches.
    pub refine_radius: usize,
    pub ransac: RansacParams,
    /// Descriptor grid of the plane sweep relative to the input images.
    pub depth_scale: usize,
    pub depth: DepthParams,
    /// Sweep range; derived from triangulated matches when unset.
    pub depth_range: Option<(f64, f64)>,
    pub fusion: FusionParams,
    pub eval_max_dist: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            images: PathBuf::from("images"),
            cameras: None,
            intrinsics: None,
            ground_truth: None,
            output: PathBuf::from("out"),
            ply_format: PlyFormat::BinaryLittleEndian,
            seed: 0,
            threads: 0,
            features: FeatureParams { scale: 8, ..FeatureParams::default() },
            flow: FlowParams::default(),
            match_stride: 1,
            fb_max: 0.5,
            refine_radius: 5,
            ransac: RansacParams::default(),
            depth_scale: 2,
            depth: DepthParams::default(),
            depth_range: None,
            fusion: FusionParams::default(),
            eval_max_dist: crate::eval::DEFAULT_MAX_DIST,
        }
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| PipelineError::Config(format!("{key}={value}: {e}")))
}

fn parse_opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    pub fn to_records(&self) -> Vec<(String, String)> {
        let (d_min, d_max) = match self.depth_range {
            Some((a, b)) => (a.to_string(), b.to_string()),
            None => ("auto".into(), "auto".into()),
        };
        let ply = match self.ply_format {
            PlyFormat::BinaryLittleEndian => "binary",
            PlyFormat::Ascii => "ascii",
        };
        [
            ("input.images", self.images.display().to_string()),
            ("input.cameras", opt_path(&self.cameras)),
            ("input.intrinsics", opt_path(&self.intrinsics)),
            ("input.ground_truth", opt_path(&self.ground_truth)),
            ("output.dir", self.output.display().to_string()),
            ("output.ply_format", ply.into()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("features.scale", self.features.scale.to_string()),
            ("features.sigma_fine", self.features.sigma_fine.to_string()),
            ("features.sigma_coarse", self.features.sigma_coarse.to_string()),
            ("features.sigma_background", self.features.sigma_background.to_string()),
            ("features.sigma_broad", self.features.sigma_broad.to_string()),
            ("flow.iterations", self.flow.iterations.to_string()),
            ("flow.stages", self.flow.stages.to_string()),
            ("flow.radius", self.flow.radius.to_string()),
            ("flow.smoothness", self.flow.smoothness.to_string()),
            ("flow.min_corr", self.flow.min_corr.to_string()),
            ("flow.match_stride", self.match_stride.to_string()),
            ("flow.fb_max", self.fb_max.to_string()),
            ("flow.refine_radius", self.refine_radius.to_string()),
            ("ransac.threshold", self.ransac.threshold.to_string()),
            ("ransac.max_iterations", self.ransac.max_iterations.to_string()),
            ("ransac.confidence", self.ransac.confidence.to_string()),
            ("ransac.min_inlier_ratio", self.ransac.min_inlier_ratio.to_string()),
            ("depth.scale", self.depth_scale.to_string()),
            ("depth.num_planes", self.depth.num_planes.to_string()),
            ("depth.min_margin", self.depth.min_margin.to_string()),
            ("depth.d_min", d_min),
            ("depth.d_max", d_max),
            ("fusion.max_reproj_px", self.fusion.max_reproj_px.to_string()),
            ("fusion.max_rel_depth_diff", self.fusion.max_rel_depth_diff.to_string()),
            ("fusion.min_views", self.fusion.min_views.to_string()),
            ("eval.max_dist", self.eval_max_dist.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sets one key. `depth.d_min`/`depth.d_max` take a number or `auto`;
    /// empty optional paths mean "not given".
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let v = value.trim();
        match key {
            "input.images" => self.images = PathBuf::from(v),
            "input.cameras" => self.cameras = parse_opt_path(v),
            "input.intrinsics" => self.intrinsics = parse_opt_path(v),
            "input.ground_truth" => self.ground_truth = parse_opt_path(v),
            "output.dir" => self.output = PathBuf::from(v),
            "output.ply_format" => {
                self.ply_format = match v {
                    "binary" => PlyFormat::BinaryLittleEndian,
                    "ascii" => PlyFormat::Ascii,
                    _ => return Err(PipelineError::Config(format!("{key}={v}: expected binary or ascii"))),
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "features.scale" => self.features.scale = parse(key, v)?,
            "features.sigma_fine" => self.features.sigma_fine = parse(key, v)?,
            "features.sigma_coarse" => self.features.sigma_coarse = parse(key, v)?,
            "features.sigma_background" => self.features.sigma_background = parse(key, v)?,
            "features.sigma_broad" => self.features.sigma_broad = parse(key, v)?,
            "flow.iterations" => self.flow.iterations = parse(key, v)?,
            "flow.stages" => self.flow.stages = parse(key, v)?,
            "flow.radius" => self.flow.radius = parse(key, v)?,
            "flow.smoothness" => self.flow.smoothness = parse(key, v)?,
            "flow.min_corr" => self.flow.min_corr = parse(key, v)?,
            "flow.match_stride" => self.match_stride = parse(key, v)?,
            "flow.fb_max" => self.fb_max = parse(key, v)?,
            "flow.refine_radius" => self.refine_radius = parse(key, v)?,
            "ransac.threshold" => self.ransac.threshold = parse(key, v)?,
            "ransac.max_iterations" => self.ransac.max_iterations = parse(key, v)?,
            "ransac.confidence" => self.ransac.confidence = parse(key, v)?,
            "ransac.min_inlier_ratio" => self.ransac.min_inlier_ratio = parse(key, v)?,
            "depth.scale" => self.depth_scale = parse(key, v)?,
            "depth.num_planes" => self.depth.num_planes = parse(key, v)?,
            "depth.min_margin" => self.depth.min_margin = parse(key, v)?,
            "depth.d_min" | "depth.d_max" => {
                let (mut lo, mut hi) = self.depth_range.unwrap_or((f64::NAN, f64::NAN));
                let x = if v == "auto" { f64::NAN } else { parse(key, v)? };
                if key == "depth.d_min" {
                    lo = x;
                } else {
                    hi = x;
                }
                // Half-specified ranges are kept as NaN and rejected by validate().
                self.depth_range = (!(lo.is_nan() && hi.is_nan())).then_some((lo, hi));
            }
            "fusion.max_reproj_px" => self.fusion.max_reproj_px = parse(key, v)?,
            "fusion.max_rel_depth_diff" => self.fusion.max_rel_depth_diff = parse(key, v)?,
            "fusion.min_views" => self.fusion.min_views = parse(key, v)?,
            "eval.max_dist" => self.eval_max_dist = parse(key, v)?,
            _ => return Err(PipelineError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, records: &[(String, String)]) -> Result<(), PipelineError> {
        records.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Defaults overridden by the records of a config file.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let records = io::read_key_values(path).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut c = Self::default();
        c.apply(&records)?;
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        io::write_key_values(path, &self.to_records()).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Checks every parameter range and that the input paths exist.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validate_params()?;
        if !self.images.is_dir() {
            return Err(PipelineError::Config(format!("input.images {} is not a directory", self.images.display())));
        }
        if let Some(c) = &self.cameras {
            if !c.is_dir() {
                return Err(PipelineError::Config(format!("input.cameras {} is not a directory", c.display())));
            }
        }
        for (key, p) in [("input.intrinsics", &self.intrinsics), ("input.ground_truth", &self.ground_truth)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(PipelineError::Config(format!("{key} {} does not exist", p.display())));
                }
            }
        }
        if self.cameras.is_none() && self.intrinsics.is_none() {
            return Err(PipelineError::Config("either input.cameras or input.intrinsics is required".into()));
        }
        Ok(())
    }

    /// Checks the parameter ranges only.
    pub fn validate_params(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.features.validate().map_err(|e| cfg(&e))?;
        self.flow.validate().map_err(|e| cfg(&e))?;
        self.ransac.validate().map_err(|e| cfg(&e))?;
        self.depth.validate().map_err(|e| cfg(&e))?;
        self.fusion.validate().map_err(|e| cfg(&e))?;
        if self.match_stride == 0 || self.depth_scale == 0 {
            return Err(PipelineError::Config("flow.match_stride and depth.scale must be ≥ 1".into()));
        }
        if !(self.fb_max > 0.0) {
            return Err(PipelineError::Config(format!("flow.fb_max must be positive (inf disables the check), got {}", self.fb_max)));
        }
        if !(self.eval_max_dist > 0.0) {
            return Err(PipelineError::Config(format!("eval.max_dist must be positive, got {}", self.eval_max_dist)));
        }
        if let Some((d_min, d_max)) = self.depth_range {
            HypothesisRange { d_min, d_max, num_planes: self.depth.num_planes }
                .validate()
                .map_err(|e| PipelineError::Config(format!("depth.d_min/depth.d_max: {e}")))?;
        }
        Ok(())
    }
}
