//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use flowmvs::depth::{extract_depth, homography_for_plane, plane_sweep, DepthHypotheses, DepthMap, DepthParams, HypothesisRange, SourceView};
use flowmvs::eval::{cloud_metrics, depth_loss, flow_loss, huber, huber_gradient, CloudMetrics, LossReport};
use flowmvs::fusion::{fuse, FusionParams, PointCloud, ViewDepth};
use flowmvs::geom::essential::five_point_normalized;
use flowmvs::geom::pose::{direction_angle, rotation_angle};
use flowmvs::geom::{decompose_essential, project, ransac_essential, CameraIntrinsics, EssentialMatrix, Match, Pose, RansacParams};
use flowmvs::matching::{build_correlation_volume, build_pyramid, extract_features, lookup, solve_flow, FeatureParams, FlowField, FlowParams, ImageBuffer};
use flowmvs::pipeline::{run_pipeline, write_bundle, PipelineConfig};
use flowmvs::synth::{render, Geometry, SyntheticScene, Texture};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_pose(rng: &mut ChaCha8Rng, rot: f64) -> Pose<f64> {
    let mut t = Vector3::zeros();
    while t.norm() < 0.2 {
        t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
    }
    Pose::from_axis_angle(&Vector3::new(rng.random_range(-rot..rot), rng.random_range(-rot..rot), rng.random_range(-rot..rot)), t)
}

fn scene_matches(rng: &mut ChaCha8Rng, k: &CameraIntrinsics<f64>, pose: &Pose<f64>, n: usize) -> Vec<Match<f64>> {
    let mut out = Vec::new();
    while out.len() < n {
        let x = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(3.0..8.0));
        let (Ok(a), Ok(b)) = (project(k, &Pose::identity(), &x), project(k, pose, &x)) else { continue };
        if k.contains(&a) && k.contains(&b) {
            out.push(Match { x: a, x_prime: b, weight: 1.0 });
        }
    }
    out
}

fn wide_camera() -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
}

fn five_point_round_trip() -> Outcome {
    let start = Instant::now();
    let k = wide_camera();
    let (mut rot_worst, mut dir_worst, mut res_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng, 0.3);
        let m = scene_matches(&mut rng, &k, &pose, 25);
        let norm: Vec<(Vector2<f64>, Vector2<f64>)> = m.iter().map(|mm| (k.normalize(&mm.x), k.normalize(&mm.x_prime))).collect();
        let x: [Vector2<f64>; 5] = std::array::from_fn(|i| norm[i].0);
        let xp: [Vector2<f64>; 5] = std::array::from_fn(|i| norm[i].1);
        let cands = five_point_normalized(&x, &xp).map_err(|e| format!("config {seed}: {e}"))?;
        for c in &cands {
            for i in 0..5 {
                res_worst = res_worst.max(c.residual(&x[i], &xp[i]).abs());
            }
        }
        // Candidates are told apart by their residual on the extra points.
        let score = |e: &EssentialMatrix<f64>| norm[5..].iter().map(|(a, b)| e.residual(a, b).abs()).fold(0.0, f64::max);
        let best = cands.iter().min_by(|a, b| score(a).total_cmp(&score(b))).ok_or(format!("config {seed}: no candidate"))?;
        let rec = decompose_essential(best, &m, &k).map_err(|e| format!("config {seed}: {e}"))?;
        rot_worst = rot_worst.max(rotation_angle(&rec.rotation, &pose.rotation));
        dir_worst = dir_worst.max(direction_angle(&rec.translation, &pose.translation));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        rot_worst < 1e-6 && dir_worst < 1e-6 && res_worst < 1e-9 && secs < 10.0,
        format!("max rotation {rot_worst:.2e} rad, max direction {dir_worst:.2e} rad, max residual {res_worst:.2e}, {secs:.2}s"),
    )
}

fn ransac_robustness() -> Outcome {
    let k = wide_camera();
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let pose = random_pose(&mut rng, 0.1);
        let mut m = scene_matches(&mut rng, &k, &pose, 70);
        for _ in 0..30 {
            m.push(Match {
                x: Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
                x_prime: Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
                weight: 1.0,
            });
        }
        let err = ransac_essential(&m, &k, &RansacParams { seed: trial, ..Default::default() }).ok().and_then(|fit| {
            let inl: Vec<Match<f64>> = m.iter().zip(&fit.inliers).filter(|(_, &b)| b).map(|(mm, _)| *mm).collect();
            let rec = decompose_essential(&fit.essential, &inl, &k).ok()?;
            Some(rotation_angle(&rec.rotation, &pose.rotation).max(direction_angle(&rec.translation, &pose.translation)))
        });
        if let Some(e) = err {
            worst = worst.max(e);
            good += usize::from(e < 1e-3);
        }
    }
    check(good >= 99, format!("{good}/100 trials under 1e-3 rad (worst successful {worst:.2e})"))
}

fn textured(size: usize, seed: u64) -> ImageBuffer<f32> {
    let t = Texture { seed, frequency: 1.0 / 16.0, ..Texture::default() };
    ImageBuffer::from_fn(size, size, |r, c| t.intensity(&Vector3::new(c as f64, r as f64, 0.5)) as f32).unwrap()
}

fn correlation_machinery() -> Outcome {
    let f1 = extract_features(&textured(64, 5), &FeatureParams::default()).unwrap();
    let f2 = extract_features(&textured(64, 6), &FeatureParams::default()).unwrap();
    let vol = build_correlation_volume(&f1, &f2).unwrap();
    let mut vol_err = 0.0f64;
    for i in 0..f1.height() {
        for j in 0..f1.width() {
            for k in 0..f2.height() {
                for l in 0..f2.width() {
                    let dot: f64 = (0..f1.dim()).map(|d| f1.descriptor(i, j)[d] as f64 * f2.descriptor(k, l)[d] as f64).sum();
                    vol_err = vol_err.max((vol.get(i, j, k, l) as f64 - dot).abs());
                }
            }
        }
    }

    let pyr = build_pyramid(vol.clone());
    let mut pool_mismatch = 0usize;
    for (lvl, pooled) in pyr.levels.iter().enumerate().skip(1) {
        let kk = 1 << lvl;
        for i in 0..vol.h1 {
            for j in 0..vol.w1 {
                for by in 0..vol.h2 / kk {
                    for bx in 0..vol.w2 / kk {
                        let mut s = 0.0f32;
                        for r in 0..kk {
                            for c in 0..kk {
                                s += vol.get(i, j, by * kk + r, bx * kk + c);
                            }
                        }
                        pool_mismatch += usize::from(pooled.get(i, j, by, bx) != s / (kk * kk) as f32);
                    }
                }
            }
        }
    }

    let (h, w) = (vol.h1, vol.w1);
    let r = 3;
    let flow: Vec<Vector2<f32>> = (0..h * w).map(|p| Vector2::new((p % 7) as f32 - 3.0, (p % 5) as f32 - 2.0)).collect();
    let field = FlowField::new(w, h, flow.clone(), vec![true; h * w]).unwrap();
    let out = lookup(&pyr, &field, r).unwrap();
    let side = 2 * r + 1;
    let mut lookup_mismatch = 0usize;
    for p in 0..h * w {
        let (i, j) = (p / w, p % w);
        for dy in 0..side {
            for dx in 0..side {
                let x = j as isize + flow[p].x as isize + dx as isize - r as isize;
                let y = i as isize + flow[p].y as isize + dy as isize - r as isize;
                let expect = if x >= 0 && y >= 0 && (x as usize) < vol.w2 && (y as usize) < vol.h2 {
                    vol.get(i, j, y as usize, x as usize)
                } else {
                    0.0
                };
                lookup_mismatch += usize::from(out[p][dy * side + dx] != expect);
            }
        }
    }
    check(
        vol_err <= 1e-7 && pool_mismatch == 0 && lookup_mismatch == 0,
        format!("volume error {vol_err:.2e}, pooling mismatches {pool_mismatch}, lookup mismatches {lookup_mismatch}"),
    )
}

fn flow_on_shift() -> Outcome {
    let start = Instant::now();
    let f1 = extract_features(&textured(256, 1), &FeatureParams::default()).unwrap();
    let f2 = f1.shifted_circular(3, 0);
    let fwd = solve_flow(&f1, &f2, &FlowParams::default()).unwrap().flow;
    let secs = start.elapsed().as_secs_f64();
    let bwd = solve_flow(&f2, &f1, &FlowParams::default()).unwrap().flow;
    // The circular wrap sends the last columns across the border.
    let margin = 4;
    let (mut shift_ok, mut fb_ok, mut n) = (0, 0, 0);
    for i in margin..f1.height() - margin {
        for j in margin..f1.width() - margin {
            n += 1;
            let a = fwd.get(i, j);
            shift_ok += usize::from((a - Vector2::new(3.0, 0.0)).norm() <= 0.5);
            if let Some(b) = bwd.sample(j as f32 + a.x, i as f32 + a.y) {
                fb_ok += usize::from((a + b).norm() <= 0.5);
            }
        }
    }
    let (s, f) = (shift_ok as f64 / n as f64, fb_ok as f64 / n as f64);
    check(s >= 0.95 && f >= 0.90 && secs < 30.0, format!("shift {s:.4}, forward-backward {f:.4}, {secs:.2}s at 256x256"))
}

fn homography_identity() -> Outcome {
    let k = CameraIntrinsics::new(400.0, 410.0, 255.5, 191.5, 512, 384).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst, mut n): (f64, usize) = (0.0, 0);
    while n < 100 {
        let pose = random_pose(&mut rng, 0.2);
        let d = rng.random_range(1.0..20.0);
        let p = Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..384.0));
        let Ok(direct) = project(&k, &pose, &k.back_project(&p, d)) else { continue };
        let h = homography_for_plane(&k, &pose, d).unwrap();
        let q = h * Vector3::new(p.x, p.y, 1.0);
        worst = worst.max((Vector2::new(q.x / q.z, q.y / q.z) - direct).norm());
        n += 1;
    }
    check(worst < 1e-9, format!("max discrepancy {worst:.2e} px over {n} triples"))
}

fn ring_scene(width: usize, height: usize, focal: f64, views: usize, seed: u64) -> SyntheticScene {
    let k = CameraIntrinsics::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height).unwrap();
    SyntheticScene::ring(Geometry::fronto_parallel(4.0, 3.0), k, views, 0.8, Vector3::new(0.0, 0.0, 4.0), seed)
}

fn plane_sweep_recovery() -> Outcome {
    let scene = ring_scene(512, 384, 400.0, 5, 21);
    let params = FeatureParams { scale: 2, ..Default::default() };
    let (feats, poses): (Vec<_>, Vec<_>) = (0..5)
        .map(|v| {
            let r = render(&scene, v).unwrap();
            (extract_features(&r.image, &params).unwrap(), r.pose)
        })
        .unzip();
    let k = scene.cameras[0].0.downscaled(2).unwrap();
    let hyp = DepthHypotheses::inverse_uniform(2.0, 10.0, 128).unwrap();
    let sources: Vec<SourceView<f64>> = (1..5).map(|s| SourceView { features: &feats[s], pose: poses[s].relative_to(&poses[0]) }).collect();
    let cost = plane_sweep(&feats[0], &sources, &k, &hyp).unwrap();
    let depth = extract_depth(&cost, &hyp, &DepthParams::default()).unwrap();
    let (mut sum, mut valid, mut total) = (0.0, 0usize, 0usize);
    for r in 2..depth.height() - 2 {
        for c in 2..depth.width() - 2 {
            total += 1;
            if let Some(d) = depth.get(r, c) {
                sum += (d - 4.0).abs();
                valid += 1;
            }
        }
    }
    let mean = sum / valid as f64;
    let half = hyp.range().local_spacing(4.0) / 2.0;
    let frac = valid as f64 / total as f64;
    check(mean < half && frac >= 0.95, format!("mean error {mean:.4} vs half spacing {half:.4}, valid {frac:.4}"))
}

fn fusion_criteria() -> Outcome {
    let scene = ring_scene(128, 96, 100.0, 6, 4);
    let rendered: Vec<_> = (0..6).map(|v| render(&scene, v).unwrap()).collect();
    let k = scene.cameras[0].0;
    let params = FusionParams::default();
    let exact: Vec<ViewDepth<f64>> = rendered[..5].iter().enumerate().map(|(id, r)| ViewDepth { id, depth: &r.depth, pose: r.pose }).collect();
    let cloud = fuse(&exact, &k, &params).unwrap();
    let rms = (cloud.positions().map(|x| (x.z - 4.0).powi(2)).sum::<f64>() / cloud.len() as f64).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = DepthMap::from_depths(k.width, k.height, (0..k.width * k.height).map(|_| rng.random_range(2.0..10.0)).collect()).unwrap();
    let mut views = exact.clone();
    views.push(ViewDepth { id: 5, depth: &noise, pose: rendered[5].pose });
    let noisy = fuse(&views, &k, &FusionParams { min_views: 3, ..params }).unwrap();
    // A fused point off the surface by more than the consistency tolerance
    // can only have come from the noise map.
    let tol = params.max_rel_depth_diff * 4.0;
    let noise_points = noisy.positions().filter(|x| (x.z - 4.0).abs() > tol).count();
    check(
        rms < 1e-6 && noise_points == 0 && !cloud.is_empty(),
        format!("RMS {rms:.2e} over {} points; {noise_points} noise points of {} with a noise view", cloud.len(), noisy.len()),
    )
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scene = ring_scene(512, 384, 400.0, 5, 21);
    let b = write_bundle(&scene, &dir.path().join("scene"), 2).unwrap();
    let run = |name: &str, threads: usize| {
        let cfg = PipelineConfig {
            images: b.images.clone(),
            cameras: Some(b.cameras.clone()),
            ground_truth: Some(b.ground_truth.clone()),
            output: dir.path().join(name),
            threads,
            ..Default::default()
        };
        let start = Instant::now();
        let m = run_pipeline(&cfg).unwrap();
        let secs = start.elapsed().as_secs_f64();
        (m, std::fs::read(cfg.output.join("fused.ply")).unwrap(), secs)
    };
    let (m, ply, secs) = run("a", 0);
    let (_, rerun, _) = run("b", 0);
    let (_, single, single_secs) = run("c", 1);
    let metrics = m.metrics.ok_or("no metrics")?;
    let range = HypothesisRange { d_min: m.depth_range.0, d_max: m.depth_range.1, num_planes: 128 };
    let spacing = range.local_spacing(4.0);
    let identical = ply == rerun && ply == single;
    check(
        metrics.overall < 2.0 * spacing && identical && secs < 300.0 && single_secs < 300.0,
        format!(
            "overall {:.4} vs 2x spacing {:.4}, {} points, identical across reruns/threads: {identical}, {secs:.1}s ({single_secs:.1}s on 1 thread)",
            metrics.overall,
            2.0 * spacing,
            m.fused_points
        ),
    )
}

fn metrics_self_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cloud = |n: usize| -> PointCloud<f64> {
        PointCloud::from_positions((0..n).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))), 0)
    };
    let (recon, gt) = (cloud(200), cloud(300));
    let brute = |q: &PointCloud<f64>, r: &PointCloud<f64>, max_dist: f64| {
        let d: Vec<f64> = q.positions().map(|a| r.positions().map(|b| (a - b).norm()).fold(f64::INFINITY, f64::min).min(max_dist)).collect();
        d.iter().sum::<f64>() / d.len() as f64
    };
    let mut oracle_err: f64 = 0.0;
    let mut exact_mean = true;
    for max_dist in [20.0, 0.15] {
        let m = cloud_metrics(&recon, &gt, max_dist).unwrap();
        oracle_err = oracle_err.max((m.mean_accuracy - brute(&recon, &gt, max_dist)).abs());
        oracle_err = oracle_err.max((m.mean_completeness - brute(&gt, &recon, max_dist)).abs());
        exact_mean &= m.overall == (m.mean_accuracy + m.mean_completeness) / 2.0;
    }
    let table: f64 = CloudMetrics::from_parts(0.391, 0.429).overall;
    check(
        exact_mean && (table - 0.411).abs() <= 0.0005 && oracle_err < 1e-12,
        format!("overall exact: {exact_mean}; (0.391+0.429)/2 = {table:.4} vs 0.411; brute-force error {oracle_err:.2e}"),
    )
}

fn losses() -> Outcome {
    let lower = 0.5 * 1.0f64 * 1.0;
    let upper = 1.0f64.abs() - 0.5;
    let continuity = (huber(1.0 - 1e-12f64) - 0.5).abs().max((huber(1.0 + 1e-12f64) - 0.5).abs()).max((huber(-1.0f64) - 0.5).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut grad_err: f64 = 0.0;
    for _ in 0..1000 {
        let z: f64 = rng.random_range(-4.0..4.0);
        if (z.abs() - 1.0).abs() < 1e-3 {
            continue;
        }
        let h = 1e-6;
        let numeric = (huber(z + h) - huber(z - h)) / (2.0 * h);
        grad_err = grad_err.max((numeric - huber_gradient(z)).abs());
    }

    let (w, hgt) = (23, 17);
    let mut map = |p_invalid: f64| {
        let mut d = DepthMap::from_depths(w, hgt, (0..w * hgt).map(|_| rng.random_range(1.0..5.0)).collect()).unwrap();
        for r in 0..hgt {
            for c in 0..w {
                if rng.random_bool(p_invalid) {
                    d.set(r, c, None);
                }
            }
        }
        d
    };
    let (pd, gd) = (map(0.2), map(0.2));
    let mut oracle = 0.0;
    for r in 0..hgt {
        for c in 0..w {
            if let (Some(a), Some(b)) = (pd.get(r, c), gd.get(r, c)) {
                let z: f64 = a - b;
                oracle += if z.abs() < 1.0 { 0.5 * z * z } else { z.abs() - 0.5 };
            }
        }
    }
    let dl = depth_loss(&pd, &gd).unwrap();
    let depth_err = (dl.sum - oracle).abs();

    let mut field = || {
        let v: Vec<Vector2<f64>> = (0..w * hgt).map(|_| Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
        let ok: Vec<bool> = (0..w * hgt).map(|_| rng.random_bool(0.8)).collect();
        FlowField::new(w, hgt, v, ok).unwrap()
    };
    let (pf, gf) = (field(), field());
    let mut oracle = 0.0;
    for p in 0..w * hgt {
        if pf.valid_mask()[p] && gf.valid_mask()[p] {
            let (a, b) = (pf.vectors()[p], gf.vectors()[p]);
            oracle += (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
        }
    }
    let fl = flow_loss(&pf, &gf).unwrap();
    let flow_err = (fl.sum - oracle).abs();
    let report = LossReport::new(dl, fl);
    let total_exact = report.l_total == report.l_depth + report.l_flow;
    check(
        lower == 0.5 && upper == 0.5 && continuity < 1e-11 && grad_err < 1e-6 && depth_err < 1e-9 && flow_err < 1e-9 && total_exact,
        format!(
            "branches {lower}/{upper}, continuity {continuity:.1e}, gradient error {grad_err:.2e}, depth oracle {depth_err:.1e}, flow oracle {flow_err:.1e}, total exact: {total_exact}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("five-point round-trip", five_point_round_trip),
        ("RANSAC robustness", ransac_robustness),
        ("correlation machinery", correlation_machinery),
        ("flow on synthetic shift", flow_on_shift),
        ("homography identity", homography_identity),
        ("plane sweep", plane_sweep_recovery),
        ("fusion", fusion_criteria),
        ("end-to-end", end_to_end),
        ("metrics self-consistency", metrics_self_consistency),
        ("losses", losses),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
