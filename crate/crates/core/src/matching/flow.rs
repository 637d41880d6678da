//! Dense flow by iterative correlation lookups.
//!
//! Each update reads the previous flow field only (Jacobi style): every pixel
//! looks up a `(2r+1)²` correlation window around its current target on one
//! pyramid level, moves to the sub-cell peak of that window and blends the
//! result with the mean flow of its four neighbours. Stages run from the
//! coarsest pyramid level to level 0. The blended proposal competes with the
//! unblended peak and with the neighbours' current flows; the candidate with
//! the highest level-0 correlation at its target is kept, but only if it
//! does not lower the pixel's correlation, so the mean correlation never
//! decreases and good flow spreads to neighbours.

use nalgebra::Vector2;
use rayon::prelude::*;

use super::correlation::{build_correlation_volume, build_pyramid, CorrelationPyramid};
use super::{FeatureMap, MatchError};
use crate::geom::Match;
use crate::Real;

/// Dense displacement field on a feature grid.
///
/// Invalid pixels carry a zero displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T: Real> {
    width: usize,
    height: usize,
    flow: Vec<Vector2<T>>,
    valid: Vec<bool>,
    confidence: Vec<T>,
}

impl<T: Real> FlowField<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            flow: vec![Vector2::zeros(); width * height],
            valid: vec![true; width * height],
            confidence: vec![T::one(); width * height],
        }
    }

    /// Builds a field, zeroing the displacement of invalid pixels. Valid
    /// pixels must have finite flow.
    pub fn new(width: usize, height: usize, mut flow: Vec<Vector2<T>>, valid: Vec<bool>) -> Result<Self, MatchError> {
        let n = width * height;
        if flow.len() != n || valid.len() != n {
            return Err(MatchError::DimensionMismatch(format!(
                "flow field {height}x{width} needs {n} entries, got {} / {}",
                flow.len(),
                valid.len()
            )));
        }
        for (f, &v) in flow.iter_mut().zip(&valid) {
            if !v {
                *f = Vector2::zeros();
            } else if !(f.x.is_finite_real() && f.y.is_finite_real()) {
                return Err(MatchError::DimensionMismatch("non-finite flow at a valid pixel".into()));
            }
        }
        Ok(Self { width, height, flow, valid, confidence: vec![T::one(); n] })
    }

    pub fn with_confidence(mut self, confidence: Vec<T>) -> Result<Self, MatchError> {
        if confidence.len() != self.flow.len() {
            return Err(MatchError::DimensionMismatch("confidence length".into()));
        }
        self.confidence = confidence;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Vector2<T> {
        self.flow[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    #[inline]
    pub fn confidence(&self, row: usize, col: usize) -> T {
        self.confidence[row * self.width + col]
    }

    pub fn vectors(&self) -> &[Vector2<T>] {
        &self.flow
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Bilinear flow at a fractional position; `None` unless all four taps
    /// are valid.
    pub fn sample(&self, x: T, y: T) -> Option<Vector2<T>> {
        let (x0, y0) = (x.floor().as_f64(), y.floor().as_f64());
        if !(x0 >= 0.0 && y0 >= 0.0 && x.as_f64() <= (self.width - 1) as f64 && y.as_f64() <= (self.height - 1) as f64) {
            return None;
        }
        let (c0, r0) = (x0 as usize, y0 as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let taps = [(r0, c0), (r0, c1), (r1, c0), (r1, c1)];
        if taps.iter().any(|&(r, c)| !self.is_valid(r, c)) {
            return None;
        }
        let ax = x - x.floor();
        let ay = y - y.floor();
        let one = T::one();
        Some(
            self.get(r0, c0) * ((one - ax) * (one - ay))
                + self.get(r0, c1) * (ax * (one - ay))
                + self.get(r1, c0) * ((one - ax) * ay)
                + self.get(r1, c1) * (ax * ay),
        )
    }

    /// Keeps only pixels whose forward flow, followed by `backward` at the
    /// target, returns within `max_err` cells of the start.
    pub fn forward_backward_checked(&self, backward: &FlowField<T>, max_err: T) -> Self {
        let mut out = self.clone();
        for p in 0..self.flow.len() {
            if !self.valid[p] {
                continue;
            }
            let start = Vector2::new(T::lit((p % self.width) as f64), T::lit((p / self.width) as f64));
            let target = start + self.flow[p];
            let ok = backward.sample(target.x, target.y).is_some_and(|b| (target + b - start).norm() <= max_err);
            if !ok {
                out.valid[p] = false;
                out.flow[p] = Vector2::zeros();
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> FlowField<U> {
        FlowField {
            width: self.width,
            height: self.height,
            flow: self.flow.iter().map(|f| Vector2::new(U::lit(f.x.as_f64()), U::lit(f.y.as_f64()))).collect(),
            valid: self.valid.clone(),
            confidence: self.confidence.iter().map(|c| U::lit(c.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Updates per stage.
    pub iterations: usize,
    /// Coarse-to-fine stages; stage `s` works on pyramid level `stages − 1 − s`.
    pub stages: usize,
    pub radius: usize,
    /// Weight of the neighbour-average term.
    pub smoothness: f64,
    /// Pixels whose final level-0 correlation falls below this are invalid.
    pub min_corr: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { iterations: 12, stages: 3, radius: 4, smoothness: 0.3, min_corr: 0.7 }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<(), MatchError> {
        let ok = self.iterations >= 1
            && (1..=super::correlation::PYRAMID_LEVELS).contains(&self.stages)
            && self.radius >= 1
            && (0.0..1.0).contains(&self.smoothness)
            && (-1.0..=1.0).contains(&self.min_corr);
        if ok {
            Ok(())
        } else {
            Err(MatchError::InvalidParameter(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution<T: Real> {
    pub flow: FlowField<T>,
    /// Mean level-0 correlation at the flow targets, once per update.
    pub mean_correlation: Vec<T>,
}

#[inline]
fn center_correlation<T: Real>(pyr: &CorrelationPyramid<T>, i: usize, j: usize, f: &Vector2<T>) -> T {
    let x = T::lit(j as f64) + f.x;
    let y = T::lit(i as f64) + f.y;
    pyr.levels[0].sample(i, j, x, y)
}

/// Vertex offset of the parabola through `(−1, l)`, `(0, c)`, `(1, r)`,
/// limited to half a cell; zero when the samples do not bracket a maximum.
#[inline]
fn parabola_peak<T: Real>(l: T, c: T, r: T) -> T {
    let denom = l - c * T::lit(2.0) + r;
    if !(denom < T::zero()) {
        return T::zero();
    }
    let half = T::lit(0.5);
    ((l - r) / (denom * T::lit(2.0))).max(-half).min(half)
}

/// Flow from `f1` to `f2` on the feature grid.
pub fn solve_flow<T: Real>(f1: &FeatureMap<T>, f2: &FeatureMap<T>, params: &FlowParams) -> Result<FlowSolution<T>, MatchError> {
    params.validate()?;
    let pyr = build_pyramid(build_correlation_volume(f1, f2)?);
    Ok(solve_flow_on_pyramid(&pyr, params))
}

pub fn solve_flow_on_pyramid<T: Real>(pyr: &CorrelationPyramid<T>, params: &FlowParams) -> FlowSolution<T> {
    let base = &pyr.levels[0];
    let (h, w) = (base.h1, base.w1);
    let radius = params.radius;
    let side = 2 * radius + 1;
    let lambda = T::lit(params.smoothness);
    let keep = T::one() - lambda;

    let mut flow = vec![Vector2::<T>::zeros(); h * w];
    let mut score: Vec<T> = (0..h * w).map(|p| center_correlation(pyr, p / w, p % w, &flow[p])).collect();
    let mut history = Vec::with_capacity(params.stages * params.iterations);

    for stage in 0..params.stages {
        let level = params.stages - 1 - stage;
        let cell = T::lit((1usize << level) as f64);
        for _ in 0..params.iterations {
            let prev = &flow;
            let prev_score = &score;
            let updated: Vec<(Vector2<T>, T)> = (0..h * w)
                .into_par_iter()
                .map_init(
                    || vec![T::zero(); side * side],
                    |window, p| {
                        let (i, j) = (p / w, p % w);
                        let f = prev[p];
                        let target_x = T::lit(j as f64) + f.x;
                        let target_y = T::lit(i as f64) + f.y;
                        pyr.window(level, i, j, target_x, target_y, radius, window);
                        let (arg, peak) = window
                            .iter()
                            .enumerate()
                            .fold((0, T::lit(f64::MIN)), |m, (q, &c)| if c > m.1 { (q, c) } else { m });
                        let (ay, ax) = (arg / side, arg % side);
                        let mut dx = T::lit(ax as f64 - radius as f64);
                        let mut dy = T::lit(ay as f64 - radius as f64);
                        if ax > 0 && ax + 1 < side {
                            dx += parabola_peak(window[ay * side + ax - 1], peak, window[ay * side + ax + 1]);
                        }
                        if ay > 0 && ay + 1 < side {
                            dy += parabola_peak(window[(ay - 1) * side + ax], peak, window[(ay + 1) * side + ax]);
                        }
                        let data = f + Vector2::new(dx, dy) * cell;

                        let mut sum = Vector2::zeros();
                        let mut neighbours = [f; 4];
                        let mut n = 0usize;
                        for (di, dj) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                            let (ni, nj) = (i as isize + di, j as isize + dj);
                            if ni >= 0 && nj >= 0 && (ni as usize) < h && (nj as usize) < w {
                                let g = prev[ni as usize * w + nj as usize];
                                sum += g;
                                neighbours[n] = g;
                                n += 1;
                            }
                        }
                        let proposal = if n > 0 { data * keep + sum * (lambda / T::lit(n as f64)) } else { data };

                        // Best of the blended proposal, the data peak and the
                        // neighbours' flows; earlier candidates win ties.
                        let mut best = (f, prev_score[p]);
                        let mut improved = false;
                        for cand in [proposal, data].into_iter().chain(neighbours[..n].iter().copied()) {
                            let s = center_correlation(pyr, i, j, &cand);
                            if s > best.1 || (!improved && s >= best.1) {
                                best = (cand, s);
                                improved = true;
                            }
                        }
                        best
                    },
                )
                .collect();
            for (p, (f, s)) in updated.into_iter().enumerate() {
                flow[p] = f;
                score[p] = s;
            }
            let total = score.iter().fold(T::zero(), |a, &b| a + b);
            history.push(total / T::lit((h * w) as f64));
        }
    }

    let min_corr = T::lit(params.min_corr);
    let (w2, h2) = (T::lit((base.w2 - 1) as f64), T::lit((base.h2 - 1) as f64));
    let mut valid = vec![false; h * w];
    for p in 0..h * w {
        let tx = T::lit((p % w) as f64) + flow[p].x;
        let ty = T::lit((p / w) as f64) + flow[p].y;
        let inside = tx >= T::zero() && ty >= T::zero() && tx <= w2 && ty <= h2;
        valid[p] = inside && score[p] >= min_corr;
    }
    let confidence = score.iter().map(|&s| s.max(T::zero()).min(T::one())).collect();
    let field = FlowField::new(w, h, flow, valid)
        .and_then(|f| f.with_confidence(confidence))
        .expect("sizes are consistent");
    FlowSolution { flow: field, mean_correlation: history }
}

/// One match per valid flow pixel on a `stride` grid, in full-resolution
/// pixels: grid cell `j` maps to `scale·j + (scale − 1)/2`, displacements
/// scale by `scale`. The weight is the clamped target correlation.
pub fn flow_to_matches<T: Real>(flow: &FlowField<T>, scale: usize, stride: usize) -> Result<Vec<Match<T>>, MatchError> {
    if stride == 0 || scale == 0 {
        return Err(MatchError::InvalidParameter("stride and scale must be ≥ 1".into()));
    }
    if flow.valid_count() == 0 {
        return Err(MatchError::NoValidFlow);
    }
    let s = T::lit(scale as f64);
    let offset = T::lit((scale as f64 - 1.0) / 2.0);
    let mut out = Vec::new();
    for i in (0..flow.height()).step_by(stride) {
        for j in (0..flow.width()).step_by(stride) {
            if !flow.is_valid(i, j) {
                continue;
            }
            let x = Vector2::new(T::lit(j as f64) * s + offset, T::lit(i as f64) * s + offset);
            let f = flow.get(i, j);
            out.push(Match { x, x_prime: x + f * s, weight: flow.confidence(i, j).max(T::zero()).min(T::one()) });
        }
    }
    Ok(out)
}
