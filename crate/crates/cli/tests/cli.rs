use std::path::Path;
use std::process::{Command, Output};

fn flowmvs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowmvs")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(o: &Output, key: &str) -> String {
    let out = stdout(o);
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from\n{out}"))
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, geometry: &str, width: &str, height: &str, focal: &str) {
    let o = flowmvs(&[
        "synth", "--out", p(dir), "--geometry", geometry, "--width", width, "--height", height, "--focal", focal, "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dump_config_lists_defaults_and_overrides() {
    let o = flowmvs(&["--dump-config"]);
    assert!(o.status.success());
    assert_eq!(value(&o, "depth.num_planes"), "128");
    assert_eq!(value(&o, "depth.d_min"), "auto");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, "# comment\ndepth.num_planes=64\nseed=9\n").unwrap();
    let o = flowmvs(&["--config", p(&cfg), "--set", "seed=11", "--dump-config"]);
    assert!(o.status.success());
    assert_eq!(value(&o, "depth.num_planes"), "64");
    assert_eq!(value(&o, "seed"), "11");

    let o = flowmvs(&["--set", "no.such.key=1", "--dump-config"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no.such.key"));
}

#[test]
fn reconstruct_then_eval_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let out = dir.path().join("out");
    synth(&scene, "plane", "256", "192", "200");
    let o = flowmvs(&[
        "reconstruct",
        "--images",
        p(&scene.join("images")),
        "--cameras",
        p(&scene.join("cameras")),
        "--ground-truth",
        p(&scene.join("ground_truth.ply")),
        "--output",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&o, "mode"), "calibrated");
    let overall: f64 = value(&o, "metrics.overall").parse().unwrap();
    assert!(out.join("manifest.txt").is_file());

    let fused = out.join("fused.ply");
    let gt = scene.join("ground_truth.ply");
    let loose = format!("{}", overall * 2.0);
    let o = flowmvs(&["eval", "--recon", p(&fused), "--gt", p(&gt), "--max-overall", &loose]);
    assert!(o.status.success());
    let again: f64 = value(&o, "overall").parse().unwrap();
    assert!((again - overall).abs() <= 1e-9 * overall.max(1.0), "{again} vs {overall}");

    let tight = format!("{}", overall / 2.0);
    let o = flowmvs(&["eval", "--recon", p(&fused), "--gt", p(&gt), "--max-overall", &tight]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn stages_run_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "sphere", "512", "384", "400");
    let images = scene.join("images");
    let cameras = scene.join("cameras");
    let (a, b) = (images.join("view_000.png"), images.join("view_001.png"));

    let flo = dir.path().join("a_b.flo");
    let o = flowmvs(&["flow", p(&a), p(&b), "--out", p(&flo)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(value(&o, "valid").parse::<usize>().unwrap() > 0);
    let o = flowmvs(&["eval", "--flow", p(&flo), "--flow-gt", p(&flo), "--max-epe", "0"]);
    assert!(o.status.success());
    assert_eq!(value(&o, "avg_epe").parse::<f64>().unwrap(), 0.0);

    let cam = dir.path().join("view_001.txt");
    let o = flowmvs(&["pose", p(&a), p(&b), "--intrinsics", p(&cameras.join("view_000.txt")), "--out", p(&cam)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(cam.is_file());

    let depth = dir.path().join("depth");
    std::fs::create_dir_all(&depth).unwrap();
    for v in 0..5 {
        let view = format!("view_{v:03}");
        let o = flowmvs(&[
            "depth",
            "--images",
            p(&images),
            "--cameras",
            p(&cameras),
            "--view",
            &view,
            "--out",
            p(&depth.join(format!("{view}.pfm"))),
            "--set",
            "depth.d_min=2",
            "--set",
            "depth.d_max=10",
            "--set",
            "depth.num_planes=64",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ply = dir.path().join("fused.ply");
    let o = flowmvs(&["fuse", "--depth", p(&depth), "--cameras", p(&cameras), "--out", p(&ply)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(value(&o, "points").parse::<usize>().unwrap() > 0);
    let o = flowmvs(&["eval", "--recon", p(&ply), "--gt", p(&scene.join("ground_truth.ply"))]);
    assert!(o.status.success());
    assert!(value(&o, "overall").parse::<f64>().unwrap() < 0.2);
}

#[test]
fn depth_without_range_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "plane", "64", "48", "50");
    let o = flowmvs(&[
        "depth",
        "--images",
        p(&scene.join("images")),
        "--cameras",
        p(&scene.join("cameras")),
        "--view",
        "view_000",
        "--out",
        p(&dir.path().join("d.pfm")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("depth.d_min"));
}

#[test]
fn reconstruct_rejects_a_single_image() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "plane", "64", "48", "50");
    for v in 1..5 {
        std::fs::remove_file(scene.join(format!("images/view_{v:03}.png"))).unwrap();
    }
    let o = flowmvs(&[
        "reconstruct",
        "--images",
        p(&scene.join("images")),
        "--cameras",
        p(&scene.join("cameras")),
        "--output",
        p(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 2 input images"));
}
