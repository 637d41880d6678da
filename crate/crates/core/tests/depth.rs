use flowmvs::depth::{extract_depth, plane_sweep, CostVolume, DepthHypotheses, DepthMap, DepthParams, SourceView};
use flowmvs::geom::CameraIntrinsics;
use flowmvs::matching::{extract_features, FeatureMap, FeatureParams};
use flowmvs::synth::{render, Geometry, SyntheticScene};
use nalgebra::Vector3;

const PLANE_DEPTH: f64 = 4.0;
const FEATURE_SCALE: usize = 2;

fn scene(depth: f64) -> SyntheticScene {
    let k = CameraIntrinsics::new(400.0, 400.0, 255.5, 191.5, 512, 384).unwrap();
    SyntheticScene::ring(Geometry::fronto_parallel(depth, 3.0), k, 5, 0.8, Vector3::new(0.0, 0.0, depth), 21)
}

struct Views {
    k: CameraIntrinsics<f64>,
    feats: Vec<FeatureMap<f64>>,
    poses: Vec<flowmvs::geom::Pose<f64>>,
}

fn views(depth: f64, scale: usize) -> Views {
    let s = scene(depth);
    let params = FeatureParams { scale, ..FeatureParams::default() };
    let (feats, poses) = (0..5)
        .map(|v| {
            let r = render(&s, v).unwrap();
            (extract_features(&r.image, &params).unwrap(), r.pose)
        })
        .unzip();
    Views { k: s.cameras[0].0.downscaled(scale).unwrap(), feats, poses }
}

impl Views {
    fn sources(&self, which: &[usize]) -> Vec<SourceView<'_, f64>> {
        which.iter().map(|&i| SourceView { features: &self.feats[i], pose: self.poses[i].relative_to(&self.poses[0]) }).collect()
    }

    fn sweep(&self, hyp: &DepthHypotheses<f64>, which: &[usize]) -> CostVolume<f64> {
        plane_sweep(&self.feats[0], &self.sources(which), &self.k, hyp).unwrap()
    }
}

fn argmin(col: &[f64]) -> usize {
    (0..col.len()).fold(0, |b, k| if col[k] < col[b] { k } else { b })
}

fn interior(w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (2..h - 2).flat_map(move |r| (2..w - 2).map(move |c| (r, c)))
}

fn mean_error(depth: &DepthMap<f64>, truth: f64) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0);
    for (r, c) in interior(depth.width(), depth.height()) {
        if let Some(d) = depth.get(r, c) {
            sum += (d - truth).abs();
            n += 1;
        }
    }
    (sum / n as f64, n)
}

#[test]
fn argmin_is_plane_nearest_true_depth() {
    // 128 planes from depth 2, with the true depth landing on plane 80.
    let (n, k_true) = (128, 80);
    let step = (0.5 - 1.0 / PLANE_DEPTH) / k_true as f64;
    let hyp = DepthHypotheses::inverse_uniform(2.0, 1.0 / (0.5 - step * (n - 1) as f64), n).unwrap();
    let nearest = (0..n).min_by(|&a, &b| (hyp.planes()[a] - PLANE_DEPTH).abs().total_cmp(&(hyp.planes()[b] - PLANE_DEPTH).abs())).unwrap();
    assert_eq!(nearest, k_true);
    let v = views(PLANE_DEPTH, FEATURE_SCALE);
    let cost = v.sweep(&hyp, &[1, 2, 3, 4]);
    let (mut total, mut hits) = (0, 0);
    for (r, c) in interior(cost.width, cost.height) {
        total += 1;
        hits += usize::from(argmin(cost.column(r, c)) == nearest);
    }
    assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
}

#[test]
fn fronto_parallel_plane_is_recovered() {
    let hyp = DepthHypotheses::inverse_uniform(2.0, 10.0, 128).unwrap();
    let v = views(PLANE_DEPTH, FEATURE_SCALE);
    let cost = v.sweep(&hyp, &[1, 2, 3, 4]);
    let depth = extract_depth(&cost, &hyp, &DepthParams::default()).unwrap();
    let interior_px = (cost.width - 4) * (cost.height - 4);
    let (mean, valid) = mean_error(&depth, PLANE_DEPTH);
    let spacing = hyp.range().local_spacing(PLANE_DEPTH);
    assert!(valid as f64 >= 0.95 * interior_px as f64, "{valid}/{interior_px}");
    assert!(mean < spacing / 2.0, "mean {mean} half spacing {}", spacing / 2.0);
}

#[test]
fn doubling_planes_does_not_increase_error() {
    let v = views(PLANE_DEPTH, FEATURE_SCALE);
    let mut last = f64::INFINITY;
    for n in [64, 128, 256] {
        let hyp = DepthHypotheses::inverse_uniform(2.0, 10.0, n).unwrap();
        let depth = extract_depth(&v.sweep(&hyp, &[1, 2, 3, 4]), &hyp, &DepthParams { num_planes: n, ..Default::default() }).unwrap();
        let (mean, _) = mean_error(&depth, PLANE_DEPTH);
        assert!(mean <= last + 1e-9, "{n} planes: {mean} > {last}");
        last = mean;
    }
}

#[test]
fn multi_source_cost_is_mean_of_single_source_costs() {
    let v = views(PLANE_DEPTH, 4);
    let hyp = DepthHypotheses::inverse_uniform(2.0, 10.0, 32).unwrap();
    let all = v.sweep(&hyp, &[1, 2, 3, 4]);
    let single: Vec<CostVolume<f64>> = (1..5).map(|i| v.sweep(&hyp, &[i])).collect();
    for (i, &c) in all.data().iter().enumerate() {
        let seen: Vec<f64> = single.iter().map(|s| s.data()[i]).filter(|x| x.is_finite()).collect();
        if seen.is_empty() {
            assert!(c.is_infinite());
        } else {
            let mean = seen.iter().sum::<f64>() / seen.len() as f64;
            assert!((c - mean).abs() < 1e-7, "{c} vs {mean}");
        }
    }
}
