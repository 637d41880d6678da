use std::path::Path;

use flowmvs::depth::HypothesisRange;
use flowmvs::geom::pose::rotation_angle;
use flowmvs::geom::CameraIntrinsics;
use flowmvs::io;
use flowmvs::pipeline::{run_pipeline, write_bundle, Bundle, PipelineConfig, PipelineError};
use flowmvs::synth::{Geometry, SyntheticScene};
use nalgebra::Vector3;

const PLANE_DEPTH: f64 = 4.0;

fn camera() -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(200.0, 200.0, 127.5, 95.5, 256, 192).unwrap()
}

fn plane_scene() -> SyntheticScene {
    SyntheticScene::ring(Geometry::fronto_parallel(PLANE_DEPTH, 3.0), camera(), 5, 0.8, Vector3::new(0.0, 0.0, PLANE_DEPTH), 3)
}

fn calibrated(b: &Bundle, out: &Path) -> PipelineConfig {
    PipelineConfig {
        images: b.images.clone(),
        cameras: Some(b.cameras.clone()),
        ground_truth: Some(b.ground_truth.clone()),
        output: out.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn calibrated_plane_run_meets_metric_and_artifacts_reload() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(&plane_scene(), &dir.path().join("scene"), 2).unwrap();
    let cfg = calibrated(&b, &dir.path().join("out"));
    let m = run_pipeline(&cfg).unwrap();

    let range = HypothesisRange { d_min: m.depth_range.0, d_max: m.depth_range.1, num_planes: cfg.depth.num_planes };
    let spacing = range.local_spacing(PLANE_DEPTH);
    let metrics = m.metrics.unwrap();
    assert!(metrics.overall < 2.0 * spacing, "overall {} vs spacing {spacing}", metrics.overall);
    assert!(m.fused_points > 0);

    let manifest = io::read_key_values(&cfg.output.join("manifest.txt")).unwrap();
    let get = |k: &str| manifest.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
    assert_eq!(get("mode").as_deref(), Some("calibrated"));
    for stage in ["load", "features", "flow", "depth", "fusion", "eval", "total"] {
        assert!(get(&format!("time.{stage}_s")).is_some(), "{stage}");
    }
    for (key, path) in &m.artifacts {
        assert!(path.exists(), "{key}");
        match path.extension().and_then(|e| e.to_str()) {
            Some("pfm") => {
                let d = io::read_depth(path).unwrap();
                d.validate().unwrap();
                assert_eq!(d.range.unwrap().num_planes, cfg.depth.num_planes);
            }
            Some("ply") => assert_eq!(io::read_ply(path).unwrap().len(), m.fused_points),
            Some("flo") => assert_eq!(io::read_flow(path).unwrap().width(), 256 / cfg.features.scale),
            Some("txt") if key.starts_with("camera.") => {
                io::read_camera(path).unwrap();
            }
            _ => {}
        }
    }
    let again = PipelineConfig::from_file(&cfg.output.join("config.txt")).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(&plane_scene(), &dir.path().join("scene"), 4).unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 3] {
        let mut cfg = calibrated(&b, &dir.path().join(format!("out{threads}")));
        cfg.threads = threads;
        cfg.ground_truth = None;
        run_pipeline(&cfg).unwrap();
        let ply = std::fs::read(cfg.output.join("fused.ply")).unwrap();
        let depth = std::fs::read(cfg.output.join("depth/view_002.pfm")).unwrap();
        outputs.push((ply, depth));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn one_image_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(&plane_scene(), &dir.path().join("scene"), 8).unwrap();
    for v in 1..5 {
        std::fs::remove_file(b.images.join(format!("view_{v:03}.png"))).unwrap();
    }
    let err = run_pipeline(&calibrated(&b, &dir.path().join("out"))).unwrap_err();
    assert!(matches!(err, PipelineError::TooFewImages { found: 1, .. }));
    assert!(err.to_string().contains("at least 2"));
}

#[test]
fn stage_errors_name_the_view_and_keep_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(&plane_scene(), &dir.path().join("scene"), 8).unwrap();
    std::fs::write(b.images.join("view_003.png"), b"not a png").unwrap();
    let cfg = calibrated(&b, &dir.path().join("out"));
    match run_pipeline(&cfg).unwrap_err() {
        PipelineError::Stage { stage, views, .. } => {
            assert_eq!(stage, "load");
            assert_eq!(views, "3");
        }
        other => panic!("{other}"),
    }
    assert!(cfg.output.join("config.txt").exists());
}

#[test]
fn uncalibrated_run_recovers_rotations() {
    let dir = tempfile::tempdir().unwrap();
    // The coarse flow grid needs the larger frame to yield enough matches.
    let k = CameraIntrinsics::new(400.0, 400.0, 255.5, 191.5, 512, 384).unwrap();
    let scene = SyntheticScene::ring(Geometry::sphere(Vector3::new(0.0, 0.0, 5.0), 2.2), k, 4, 0.8, Vector3::new(0.0, 0.0, 5.0), 9);
    let b = write_bundle(&scene, &dir.path().join("scene"), 4).unwrap();
    let cfg = PipelineConfig {
        images: b.images.clone(),
        intrinsics: Some(b.cameras.join("view_000.txt")),
        output: dir.path().join("out"),
        ..Default::default()
    };
    let m = run_pipeline(&cfg).unwrap();
    assert!(!m.calibrated);
    assert!(m.fused_points > 0);
    for v in 1..4 {
        let (_, pose) = io::read_camera(&cfg.output.join(format!("cameras/view_{v:03}.txt"))).unwrap();
        let err = rotation_angle(&pose.rotation, &scene.cameras[v].1.rotation);
        assert!(err < 0.05, "view {v}: rotation error {err}");
    }
}
