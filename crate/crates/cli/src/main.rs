use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flowmvs::depth::{DepthHypotheses, SourceView};
use flowmvs::eval::{cloud_metrics, flow_metrics};
use flowmvs::fusion::{fuse, ViewDepth};
use flowmvs::geom::{CameraIntrinsics, Pose};
use flowmvs::io;
use flowmvs::matching::{extract_features, FeatureParams};
use flowmvs::pipeline::{self, list_images, match_pair, relative_pose, run_pipeline, sweep_view, view_features, PipelineConfig};
use flowmvs::synth::{Geometry, SyntheticScene};
use nalgebra::Vector3;

#[derive(Parser)]
#[command(name = "flowmvs", version, about = "Flow-based structure from motion and plane-sweep multi-view stereo")]
struct Cli {
    /// Key-value configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set depth.num_planes=256`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline on a directory of images.
    Reconstruct {
        #[arg(long)]
        images: Option<PathBuf>,
        /// Directory of per-view camera files; skips pose recovery.
        #[arg(long)]
        cameras: Option<PathBuf>,
        /// Camera file providing shared intrinsics for pose recovery.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Forward-backward checked flow between two images.
    Flow {
        reference: PathBuf,
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative pose of `source` with respect to `reference`, unit baseline.
    Pose {
        reference: PathBuf,
        source: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Camera file written for the source view.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plane-sweep depth of one view against all other views. The sweep
    /// range comes from `depth.d_min` and `depth.d_max`.
    Depth {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// File stem of the reference image.
        #[arg(long)]
        view: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse every depth map in a directory into a point cloud.
    Fuse {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cloud or flow metrics. Exits with status 1 when a given threshold is
    /// exceeded.
    Eval {
        /// Reconstructed cloud.
        #[arg(long, requires = "gt", conflicts_with = "flow")]
        recon: Option<PathBuf>,
        /// Ground-truth cloud.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Predicted flow.
        #[arg(long, requires = "flow_gt")]
        flow: Option<PathBuf>,
        #[arg(long)]
        flow_gt: Option<PathBuf>,
        #[arg(long)]
        max_overall: Option<f64>,
        #[arg(long)]
        max_accuracy: Option<f64>,
        #[arg(long)]
        max_completeness: Option<f64>,
        #[arg(long)]
        max_epe: Option<f64>,
    },
    /// Render a synthetic bundle: images, cameras, depth and ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Shape::Plane)]
        geometry: Shape,
        #[arg(long, default_value_t = 5)]
        views: usize,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 384)]
        height: usize,
        #[arg(long, default_value_t = 400.0)]
        focal: f64,
        /// Distance from the reference camera to the scene.
        #[arg(long, default_value_t = 4.0)]
        distance: f64,
        #[arg(long, default_value_t = 0.8)]
        baseline: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pixel stride of the ground-truth cloud.
        #[arg(long, default_value_t = 2)]
        gt_stride: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Plane,
    Slanted,
    Sphere,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {o:?}"))?;
        c.set(k.trim(), v)?;
    }
    Ok(c)
}

fn print_records(records: &[(String, String)]) {
    for (k, v) in records {
        println!("{k}={v}");
    }
}

fn thread_pool(config: &PipelineConfig) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(config.threads).build()?)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means an evaluation threshold was exceeded.
fn run(cli: Cli) -> Result<bool> {
    let mut config = load_config(&cli)?;
    if cli.dump_config {
        print_records(&config.to_records());
        return Ok(true);
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given; see --help");
    };
    match command {
        Command::Reconstruct { images, cameras, intrinsics, ground_truth, output } => {
            if let Some(p) = images {
                config.images = p;
            }
            config.cameras = cameras.or(config.cameras);
            config.intrinsics = intrinsics.or(config.intrinsics);
            config.ground_truth = ground_truth.or(config.ground_truth);
            if let Some(p) = output {
                config.output = p;
            }
            let manifest = run_pipeline(&config)?;
            print_records(&manifest.to_records());
        }
        Command::Flow { reference, source, out } => {
            config.validate_params()?;
            let (a, b) = (io::load_image(&reference)?, io::load_image(&source)?);
            let (flow, matches) = thread_pool(&config)?.install(|| -> Result<_> {
                let (fa, fb) = (view_features(&a, &config)?, view_features(&b, &config)?);
                Ok(match_pair(&fa, &fb, &config)?)
            })?;
            io::write_flow(&out, &flow.cast())?;
            println!("valid={}", flow.valid_count());
            println!("matches={}", matches.len());
        }
        Command::Pose { reference, source, intrinsics, out } => {
            config.validate_params()?;
            let (k, _) = io::read_camera(&intrinsics)?;
            let (a, b) = (io::load_image(&reference)?, io::load_image(&source)?);
            let fit = thread_pool(&config)?.install(|| -> Result<_> {
                let (fa, fb) = (view_features(&a, &config)?, view_features(&b, &config)?);
                let (_, matches) = match_pair(&fa, &fb, &config)?;
                relative_pose(&matches, &k, &config).map_err(|e| anyhow!(e))
            })?;
            io::write_camera(&out, &k, &fit.pose)?;
            println!("inliers={}", fit.inliers.iter().filter(|&&x| x).count());
            println!("matches={}", fit.inliers.len());
        }
        Command::Depth { images, cameras, view, out } => {
            config.validate_params()?;
            let (d_min, d_max) = config.depth_range.context("depth needs depth.d_min and depth.d_max")?;
            let paths = list_images(&images)?;
            let r = paths.iter().position(|p| stem(p) == view).with_context(|| format!("no image named {view} in {}", images.display()))?;
            let cams: Vec<(CameraIntrinsics<f64>, Pose<f64>)> =
                paths.iter().map(|p| io::read_camera(&cameras.join(format!("{}.txt", stem(p))))).collect::<Result<_, _>>()?;
            if cams.iter().any(|c| c.0 != cams[0].0) {
                bail!("all views must share the same intrinsics");
            }
            let k = cams[0].0.downscaled(config.depth_scale)?;
            let hyp = DepthHypotheses::inverse_uniform(d_min, d_max, config.depth.num_planes)?;
            let params = FeatureParams { scale: config.depth_scale, ..config.features };
            let map = thread_pool(&config)?.install(|| -> Result<_> {
                let feats = paths.iter().map(|p| Ok(extract_features(&io::load_image(p)?, &params)?)).collect::<Result<Vec<_>>>()?;
                let sources: Vec<SourceView<f64>> = (0..paths.len())
                    .filter(|&s| s != r)
                    .map(|s| SourceView { features: &feats[s], pose: cams[s].1.relative_to(&cams[r].1) })
                    .collect();
                Ok(sweep_view(&feats[r], &sources, &k, &hyp, &config.depth)?)
            })?;
            io::write_depth(&out, &map, Some(&out.with_extension("png")))?;
            println!("valid={}", map.valid_count());
        }
        Command::Fuse { depth, cameras, out } => {
            config.validate_params()?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&depth)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pfm"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no .pfm depth maps in {}", depth.display());
            }
            let maps = paths.iter().map(|p| io::read_depth(p)).collect::<Result<Vec<_>, _>>()?;
            let cams: Vec<(CameraIntrinsics<f64>, Pose<f64>)> =
                paths.iter().map(|p| io::read_camera(&cameras.join(format!("{}.txt", stem(p))))).collect::<Result<_, _>>()?;
            let (w, h) = (maps[0].width(), maps[0].height());
            let k0 = cams[0].0;
            if !k0.width.is_multiple_of(w) || k0.height / (k0.width / w) != h {
                bail!("depth maps are {w}x{h}, which is not an integer downscale of the {}x{} camera", k0.width, k0.height);
            }
            let k = k0.downscaled(k0.width / w)?;
            for (i, (m, c)) in maps.iter().zip(&cams).enumerate() {
                if m.width() != w || m.height() != h || c.0 != k0 {
                    bail!("{} differs in size or intrinsics from {}", paths[i].display(), paths[0].display());
                }
            }
            let views: Vec<ViewDepth<f64>> = maps.iter().zip(&cams).enumerate().map(|(id, (depth, c))| ViewDepth { id, depth, pose: c.1 }).collect();
            let cloud = thread_pool(&config)?.install(|| fuse(&views, &k, &config.fusion))?;
            io::write_ply(&out, &cloud.cast(), config.ply_format)?;
            println!("points={}", cloud.len());
        }
        Command::Eval { recon, gt, flow, flow_gt, max_overall, max_accuracy, max_completeness, max_epe } => {
            config.validate_params()?;
            let mut pass = true;
            let mut check = |name: &str, value: f64, limit: Option<f64>| {
                if let Some(limit) = limit {
                    if value > limit || value.is_nan() {
                        eprintln!("{name} {value} exceeds {limit}");
                        pass = false;
                    }
                }
            };
            match (recon, gt, flow, flow_gt) {
                (Some(recon), Some(gt), None, _) => {
                    let a = io::read_ply(&recon)?.cast::<f64>();
                    let b = io::read_ply(&gt)?.cast::<f64>();
                    let m = thread_pool(&config)?.install(|| cloud_metrics(&a, &b, config.eval_max_dist))?;
                    println!("accuracy={:e}", m.mean_accuracy);
                    println!("completeness={:e}", m.mean_completeness);
                    println!("overall={:e}", m.overall);
                    check("accuracy", m.mean_accuracy, max_accuracy);
                    check("completeness", m.mean_completeness, max_completeness);
                    check("overall", m.overall, max_overall);
                }
                (None, None, Some(pred), Some(truth)) => {
                    let m = flow_metrics(&io::read_flow(&pred)?, &io::read_flow(&truth)?)?;
                    println!("avg_epe={:e}", m.avg_epe);
                    println!("frac_gt3px={:e}", m.frac_gt3px);
                    println!("avg_err_gt3px={:e}", m.avg_err_gt3px);
                    println!("pixels={}", m.pixel_count);
                    check("avg_epe", f64::from(m.avg_epe), max_epe);
                }
                _ => bail!("eval needs either --recon and --gt or --flow and --flow-gt"),
            }
            return Ok(pass);
        }
        Command::Synth { out, geometry, views, width, height, focal, distance, baseline, seed, gt_stride } => {
            if views < 2 {
                bail!("synth needs at least 2 views");
            }
            let k = CameraIntrinsics::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)?;
            let target = Vector3::new(0.0, 0.0, distance);
            let geometry = match geometry {
                Shape::Plane => Geometry::fronto_parallel(distance, 0.75 * distance),
                Shape::Slanted => Geometry::slanted(target, Vector3::new(0.3, 0.0, -1.0).normalize(), 0.75 * distance),
                Shape::Sphere => Geometry::sphere(target, 0.45 * distance),
            };
            let scene = SyntheticScene::ring(geometry, k, views, baseline, target, seed);
            let bundle = pipeline::write_bundle(&scene, &out, gt_stride)?;
            println!("images={}", bundle.images.display());
            println!("cameras={}", bundle.cameras.display());
            println!("depth={}", bundle.depth.display());
            println!("ground_truth={}", bundle.ground_truth.display());
        }
    }
    Ok(true)
}
