use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::essential::{five_point_normalized, EssentialMatrix};
use super::{CameraIntrinsics, GeomError, Match};
use crate::Real;

/// Hypotheses scored per parallel batch. The early-exit test only runs
/// between batches, so results do not depend on the worker count.
const BATCH: usize = 32;

/// Minimal samples drawn from the winner's inliers by the local
/// optimisation step.
const LOCAL_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Inlier threshold on the Sampson distance, in normalized image units.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Stop once an all-inlier sample has been drawn with this probability.
    pub confidence: f64,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { threshold: 1e-3, max_iterations: 2048, confidence: 0.999, min_inlier_ratio: 0.25, seed: 0 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), GeomError> {
        let ok = self.threshold > 0.0
            && self.threshold.is_finite()
            && self.max_iterations > 0
            && self.confidence > 0.0
            && self.confidence < 1.0
            && (0.0..=1.0).contains(&self.min_inlier_ratio);
        if ok {
            Ok(())
        } else {
            Err(GeomError::InvalidParameter(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacResult<T: Real> {
    pub essential: EssentialMatrix<T>,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub iterations: usize,
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let all_in = inlier_ratio.powi(5);
    if all_in >= 1.0 {
        return 1;
    }
    if all_in <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - all_in).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Robust essential-matrix estimation by five-point RANSAC.
///
/// Hypothesis `h` draws its sample from a ChaCha stream keyed by
/// `(seed, h)`, and the winner is the lowest hypothesis index among those
/// with the most inliers. The winner is then refined by re-solving from
/// samples of its own inliers, keeping the lowest median distance over them;
/// the returned mask and count belong to the refined model.
pub fn ransac_essential<T: Real>(
    matches: &[Match<T>],
    k: &CameraIntrinsics<T>,
    params: &RansacParams,
) -> Result<RansacResult<T>, GeomError> {
    params.validate()?;
    let n = matches.len();
    if n < 5 {
        return Err(GeomError::InsufficientMatches { got: n, need: 5 });
    }
    let normalized: Vec<(Vector2<T>, Vector2<T>)> = matches.iter().map(|m| (k.normalize(&m.x), k.normalize(&m.x_prime))).collect();
    let threshold = T::lit(params.threshold);
    let count_inliers = |e: &EssentialMatrix<T>| {
        normalized.iter().filter(|(a, b)| e.sampson_distance(a, b) < threshold).count()
    };

    let mut best: Option<(usize, usize, EssentialMatrix<T>)> = None;
    let mut required = params.max_iterations;
    let mut done = 0;
    while done < required.min(params.max_iterations) {
        let end = (done + BATCH).min(params.max_iterations);
        let scored: Vec<Option<(usize, usize, EssentialMatrix<T>)>> = (done..end)
            .into_par_iter()
            .map(|h| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(h as u64);
                let idx = sample(&mut rng, n, 5);
                let x: [Vector2<T>; 5] = std::array::from_fn(|i| normalized[idx.index(i)].0);
                let xp: [Vector2<T>; 5] = std::array::from_fn(|i| normalized[idx.index(i)].1);
                let cands = five_point_normalized(&x, &xp).ok()?;
                let mut local: Option<(usize, EssentialMatrix<T>)> = None;
                for c in cands {
                    let cnt = count_inliers(&c);
                    if local.as_ref().is_none_or(|(b, _)| cnt > *b) {
                        local = Some((cnt, c));
                    }
                }
                local.map(|(cnt, e)| (cnt, h, e))
            })
            .collect();
        for (cnt, h, e) in scored.into_iter().flatten() {
            let better = match &best {
                None => true,
                Some((bc, bh, _)) => cnt > *bc || (cnt == *bc && h < *bh),
            };
            if better {
                best = Some((cnt, h, e));
            }
        }
        done = end;
        if let Some((cnt, _, _)) = &best {
            required = required_iterations(*cnt as f64 / n as f64, params.confidence);
        }
    }

    let (count, _, essential) = best.ok_or(GeomError::NoConsensus { ratio: 0.0 })?;
    let ratio = count as f64 / n as f64;
    if count < 5 || ratio < params.min_inlier_ratio {
        return Err(GeomError::NoConsensus { ratio });
    }
    let essential = local_optimise(&normalized, essential, params);
    let inliers: Vec<bool> = normalized.iter().map(|(a, b)| essential.sampson_distance(a, b) < threshold).collect();
    let inlier_count = inliers.iter().filter(|&&b| b).count();
    Ok(RansacResult { essential, inlier_count, inliers, iterations: done })
}

/// Median Sampson distance over the matches listed in `pool`.
fn median_distance<T: Real>(e: &EssentialMatrix<T>, normalized: &[(Vector2<T>, Vector2<T>)], pool: &[usize]) -> f64 {
    let mut d: Vec<f64> = pool.iter().map(|&i| e.sampson_distance(&normalized[i].0, &normalized[i].1).as_f64()).collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Re-solves from minimal samples of the winner's inliers and keeps the
/// model with the lowest median distance over those inliers. The
/// count-based winner can absorb an outlier lying just inside the threshold
/// of a slightly wrong model; the median ignores it.
fn local_optimise<T: Real>(normalized: &[(Vector2<T>, Vector2<T>)], winner: EssentialMatrix<T>, params: &RansacParams) -> EssentialMatrix<T> {
    let threshold = T::lit(params.threshold);
    let pool: Vec<usize> = (0..normalized.len()).filter(|&i| winner.sampson_distance(&normalized[i].0, &normalized[i].1) < threshold).collect();
    if pool.len() <= 5 {
        return winner;
    }
    let best = (0..LOCAL_SAMPLES)
        .into_par_iter()
        .filter_map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream((1u64 << 63) | j as u64);
            let idx = sample(&mut rng, pool.len(), 5);
            let x: [Vector2<T>; 5] = std::array::from_fn(|i| normalized[pool[idx.index(i)]].0);
            let xp: [Vector2<T>; 5] = std::array::from_fn(|i| normalized[pool[idx.index(i)]].1);
            five_point_normalized(&x, &xp)
                .ok()?
                .into_iter()
                .map(|e| (median_distance(&e, normalized, &pool), j, e))
                .min_by(|a, b| a.0.total_cmp(&b.0))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    match best {
        Some((cost, _, e)) if cost < median_distance(&winner, normalized, &pool) => e,
        _ => winner,
    }
}
