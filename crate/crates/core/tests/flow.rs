use std::time::Instant;

use flowmvs::matching::correlation::{build_correlation_volume, build_pyramid, lookup};
use flowmvs::matching::{extract_features, solve_flow, FeatureMap, FeatureParams, FlowField, FlowParams, ImageBuffer};
use flowmvs::synth::Texture;
use nalgebra::{Vector2, Vector3};

fn textured(size: usize, seed: u64) -> ImageBuffer<f32> {
    let t = Texture { seed, frequency: 1.0 / 16.0, ..Texture::default() };
    ImageBuffer::from_fn(size, size, |r, c| t.intensity(&Vector3::new(c as f64, r as f64, 0.5)) as f32).unwrap()
}

fn interior(f: &FeatureMap<f32>, margin: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    (margin..f.height() - margin).flat_map(move |i| (margin..f.width() - margin).map(move |j| (i, j)))
}

#[test]
fn circular_shift_is_recovered() {
    let start = Instant::now();
    let f1 = extract_features(&textured(256, 1), &FeatureParams::default()).unwrap();
    let f2 = f1.shifted_circular(3, 0);
    let sol = solve_flow(&f1, &f2, &FlowParams::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    // Circular wrap makes the last three columns map across the border.
    let margin = 4;
    let (mut ok, mut n) = (0, 0);
    for (i, j) in interior(&f1, margin) {
        n += 1;
        if (sol.flow.get(i, j) - Vector2::new(3.0, 0.0)).norm() <= 0.5 {
            ok += 1;
        }
    }
    let frac = ok as f64 / n as f64;
    println!("shift: {ok}/{n} = {frac:.4} within 0.5 px, {elapsed:.2}s");
    assert!(frac >= 0.95, "{frac}");
    assert!(elapsed < 30.0);
    for w in sol.mean_correlation.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{:?}", sol.mean_correlation);
    }
}

#[test]
fn forward_backward_round_trip() {
    let f1 = extract_features(&textured(256, 2), &FeatureParams::default()).unwrap();
    let f2 = f1.shifted_circular(3, 0);
    let fwd = solve_flow(&f1, &f2, &FlowParams::default()).unwrap().flow;
    let bwd = solve_flow(&f2, &f1, &FlowParams::default()).unwrap().flow;
    let (mut ok, mut n) = (0, 0);
    for (i, j) in interior(&f1, 4) {
        n += 1;
        let a = fwd.get(i, j);
        let (x, y) = (j as f32 + a.x, i as f32 + a.y);
        if let Some(b) = bwd.sample(x, y) {
            if (a + b).norm() <= 0.5 {
                ok += 1;
            }
        }
    }
    let frac = ok as f64 / n as f64;
    println!("forward-backward: {frac:.4}");
    assert!(frac >= 0.90, "{frac}");
}

#[test]
fn identical_features_give_zero_flow() {
    let f = extract_features(&textured(128, 3), &FeatureParams::default()).unwrap();
    let sol = solve_flow(&f, &f, &FlowParams::default()).unwrap();
    let mean = sol.flow.vectors().iter().map(|v| v.norm()).sum::<f32>() / sol.flow.vectors().len() as f32;
    assert!(mean < 0.05, "{mean}");
}

#[test]
fn solve_flow_is_deterministic() {
    let f1 = extract_features(&textured(128, 4), &FeatureParams::default()).unwrap();
    let f2 = f1.shifted_circular(2, 1);
    let a = solve_flow(&f1, &f2, &FlowParams::default()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| solve_flow(&f1, &f2, &FlowParams::default()).unwrap());
    assert_eq!(a, b);
}

#[test]
fn volume_matches_quadruple_loop() {
    let f1 = extract_features(&textured(64, 5), &FeatureParams::default()).unwrap();
    let f2 = extract_features(&textured(64, 6), &FeatureParams::default()).unwrap();
    let vol = build_correlation_volume(&f1, &f2).unwrap();
    let mut worst = 0.0f64;
    for i in 0..f1.height() {
        for j in 0..f1.width() {
            for k in 0..f2.height() {
                for l in 0..f2.width() {
                    let mut dot = 0.0f64;
                    for d in 0..f1.dim() {
                        dot += f1.descriptor(i, j)[d] as f64 * f2.descriptor(k, l)[d] as f64;
                    }
                    worst = worst.max((vol.get(i, j, k, l) as f64 - dot).abs());
                    assert!(vol.get(i, j, k, l).abs() <= 1.0 + 1e-6);
                }
            }
        }
    }
    assert!(worst <= 1e-7, "{worst}");
}

#[test]
fn pooling_matches_scalar_oracle() {
    let f1 = extract_features(&textured(64, 7), &FeatureParams::default()).unwrap();
    let vol = build_correlation_volume(&f1, &f1).unwrap();
    let pyr = build_pyramid(vol.clone());
    for (lvl, pooled) in pyr.levels.iter().enumerate().skip(1) {
        let kk = 1 << lvl;
        for i in (0..vol.h1).step_by(3) {
            for j in (0..vol.w1).step_by(3) {
                for by in 0..vol.h2 / kk {
                    for bx in 0..vol.w2 / kk {
                        let mut s = 0.0f32;
                        for r in 0..kk {
                            for c in 0..kk {
                                s += vol.get(i, j, by * kk + r, bx * kk + c);
                            }
                        }
                        assert_eq!(pooled.get(i, j, by, bx), s / (kk * kk) as f32);
                    }
                }
            }
        }
    }
}

#[test]
fn integer_lookup_equals_direct_indexing() {
    let f1 = extract_features(&textured(64, 8), &FeatureParams::default()).unwrap();
    let f2 = extract_features(&textured(64, 9), &FeatureParams::default()).unwrap();
    let vol = build_correlation_volume(&f1, &f2).unwrap();
    let (h, w) = (vol.h1, vol.w1);
    let r = 2;
    let flow: Vec<Vector2<f32>> = (0..h * w).map(|p| Vector2::new((p % 5) as f32 - 2.0, (p % 3) as f32 - 1.0)).collect();
    let field = FlowField::new(w, h, flow.clone(), vec![true; h * w]).unwrap();
    let pyr = build_pyramid(vol.clone());
    let out = lookup(&pyr, &field, r).unwrap();
    let side = 2 * r + 1;
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
                assert_eq!(out[p][dy * side + dx], expect);
            }
        }
    }
}

#[test]
fn lookup_outside_is_zero() {
    let f = extract_features(&textured(64, 10), &FeatureParams::default()).unwrap();
    let pyr = build_pyramid(build_correlation_volume(&f, &f).unwrap());
    let (h, w) = (f.height(), f.width());
    let field = FlowField::new(w, h, vec![Vector2::new(1000.0, -1000.0); h * w], vec![true; h * w]).unwrap();
    let out = lookup(&pyr, &field, 4).unwrap();
    assert!(out.iter().flatten().all(|&v| v == 0.0));
    let zero = lookup(&pyr, &FlowField::zeros(w, h), 1).unwrap();
    for p in 0..h * w {
        assert!((zero[p][4] - 1.0).abs() < 1e-6);
    }
}
