//! All-pairs cosine-similarity volume, its pooled pyramid and windowed
//! lookups.

use nalgebra::Vector2;
use rayon::prelude::*;

use super::{FeatureMap, FlowField, MatchError};
use crate::Real;

pub const PYRAMID_LEVELS: usize = 4;

/// 4D volume `corr[i, j, k, l] = ⟨f1[i, j], f2[k, l]⟩`.
///
/// Stored row-major with the target (image 2) dimensions innermost, so
/// `target(i, j)` is a contiguous `h2 × w2` slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume<T: Real> {
    pub h1: usize,
    pub w1: usize,
    pub h2: usize,
    pub w2: usize,
    data: Vec<T>,
}

impl<T: Real> CorrelationVolume<T> {
    pub fn from_raw(h1: usize, w1: usize, h2: usize, w2: usize, data: Vec<T>) -> Result<Self, MatchError> {
        if data.len() != h1 * w1 * h2 * w2 {
            return Err(MatchError::DimensionMismatch(format!(
                "volume {h1}x{w1}x{h2}x{w2} needs {} entries, got {}",
                h1 * w1 * h2 * w2,
                data.len()
            )));
        }
        Ok(Self { h1, w1, h2, w2, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.data[((i * self.w1 + j) * self.h2 + k) * self.w2 + l]
    }

    /// The `h2 × w2` similarity map of source pixel `(i, j)`.
    #[inline]
    pub fn target(&self, i: usize, j: usize) -> &[T] {
        let n = self.h2 * self.w2;
        let o = (i * self.w1 + j) * n;
        &self.data[o..o + n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Bilinear read of `target(i, j)` at fractional `(x, y)`; taps outside
    /// the grid contribute zero.
    #[inline]
    pub fn sample(&self, i: usize, j: usize, x: T, y: T) -> T {
        bilinear_zero_padded(self.target(i, j), self.w2, self.h2, x, y)
    }
}

#[inline]
fn bilinear_zero_padded<T: Real>(map: &[T], w: usize, h: usize, x: T, y: T) -> T {
    let xf = x.floor();
    let yf = y.floor();
    let (x0, y0) = (xf.as_f64(), yf.as_f64());
    if !(x0 > -2.0 && y0 > -2.0 && x0 < w as f64 && y0 < h as f64) {
        return T::zero();
    }
    let ax = x - xf;
    let ay = y - yf;
    let one = T::one();
    let (x0, y0) = (x0 as isize, y0 as isize);
    let tap = |c: isize, r: isize| {
        if c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h {
            map[r as usize * w + c as usize]
        } else {
            T::zero()
        }
    };
    let top = if ax == T::zero() { tap(x0, y0) } else { tap(x0, y0) * (one - ax) + tap(x0 + 1, y0) * ax };
    if ay == T::zero() {
        return top;
    }
    let bottom = if ax == T::zero() { tap(x0, y0 + 1) } else { tap(x0, y0 + 1) * (one - ax) + tap(x0 + 1, y0 + 1) * ax };
    top * (one - ay) + bottom * ay
}

/// Cosine similarity between every pair of descriptors.
pub fn build_correlation_volume<T: Real>(f1: &FeatureMap<T>, f2: &FeatureMap<T>) -> Result<CorrelationVolume<T>, MatchError> {
    if f1.dim() != f2.dim() || f1.scale() != f2.scale() {
        return Err(MatchError::DimensionMismatch(format!(
            "descriptor dim/scale {}/{} vs {}/{}",
            f1.dim(),
            f1.scale(),
            f2.dim(),
            f2.scale()
        )));
    }
    let (h1, w1, h2, w2) = (f1.height(), f1.width(), f2.height(), f2.width());
    let n2 = h2 * w2;
    let mut data = vec![T::zero(); h1 * w1 * n2];
    data.par_chunks_mut(n2).enumerate().for_each(|(p, out)| {
        let a = f1.descriptor(p / w1, p % w1);
        for (q, o) in out.iter_mut().enumerate() {
            let b = f2.descriptor(q / w2, q % w2);
            // f64 accumulation keeps f32 volumes within one rounding of the exact dot product.
            *o = T::lit(a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x.as_f64() * y.as_f64()));
        }
    });
    Ok(CorrelationVolume { h1, w1, h2, w2, data })
}

/// Four volumes; level `k` mean-pools the target dimensions of level 0 with
/// a `2ᵏ × 2ᵏ` kernel. Partial edge blocks average the entries they cover.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPyramid<T: Real> {
    pub levels: Vec<CorrelationVolume<T>>,
}

pub fn build_pyramid<T: Real>(vol: CorrelationVolume<T>) -> CorrelationPyramid<T> {
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    for k in 1..PYRAMID_LEVELS {
        levels.push(pool_targets(&vol, 1 << k));
    }
    levels.insert(0, vol);
    CorrelationPyramid { levels }
}

fn pool_targets<T: Real>(vol: &CorrelationVolume<T>, kernel: usize) -> CorrelationVolume<T> {
    let (h2, w2) = (vol.h2, vol.w2);
    let (ph, pw) = (h2.div_ceil(kernel), w2.div_ceil(kernel));
    let mut data = vec![T::zero(); vol.h1 * vol.w1 * ph * pw];
    data.par_chunks_mut(ph * pw).enumerate().for_each(|(p, out)| {
        let src = vol.target(p / vol.w1, p % vol.w1);
        for by in 0..ph {
            let rows = by * kernel..((by + 1) * kernel).min(h2);
            for bx in 0..pw {
                let cols = bx * kernel..((bx + 1) * kernel).min(w2);
                let mut acc = T::zero();
                for r in rows.clone() {
                    for c in cols.clone() {
                        acc += src[r * w2 + c];
                    }
                }
                out[by * pw + bx] = acc / T::lit((rows.len() * cols.len()) as f64);
            }
        }
    });
    CorrelationVolume { h1: vol.h1, w1: vol.w1, h2: ph, w2: pw, data }
}

impl<T: Real> CorrelationPyramid<T> {
    /// Level-`k` coordinate of a level-0 target position. Pooled cell `c`
    /// covers level-0 cells `[c·2ᵏ, (c+1)·2ᵏ)`, so its centre is at
    /// `c·2ᵏ + (2ᵏ − 1)/2`.
    #[inline]
    pub fn to_level(level: usize, u: T) -> T {
        let s = T::lit((1usize << level) as f64);
        (u - (s - T::one()) * T::lit(0.5)) / s
    }

    #[inline]
    pub fn from_level(level: usize, c: T) -> T {
        let s = T::lit((1usize << level) as f64);
        c * s + (s - T::one()) * T::lit(0.5)
    }

    /// Fills `out` with the `(2r+1)²` window of level `level` around the
    /// level-0 target position `(x, y)` of source pixel `(i, j)`, row by row.
    #[allow(clippy::too_many_arguments)]
    pub fn window(&self, level: usize, i: usize, j: usize, x: T, y: T, radius: usize, out: &mut [T]) {
        let vol = &self.levels[level];
        let cx = Self::to_level(level, x);
        let cy = Self::to_level(level, y);
        let map = vol.target(i, j);
        let side = 2 * radius + 1;
        for dy in 0..side {
            let oy = T::lit(dy as f64 - radius as f64);
            for dx in 0..side {
                let ox = T::lit(dx as f64 - radius as f64);
                out[dy * side + dx] = bilinear_zero_padded(map, vol.w2, vol.h2, cx + ox, cy + oy);
            }
        }
    }
}

/// Per-pixel correlation features: for each source pixel, the `(2r+1)²`
/// window of every pyramid level around its flow target, concatenated
/// level by level (length `4·(2r+1)²`).
pub fn lookup<T: Real>(pyr: &CorrelationPyramid<T>, flow: &FlowField<T>, radius: usize) -> Result<Vec<Vec<T>>, MatchError> {
    if radius == 0 {
        return Err(MatchError::InvalidParameter("lookup radius must be ≥ 1".into()));
    }
    let base = &pyr.levels[0];
    if flow.width() != base.w1 || flow.height() != base.h1 {
        return Err(MatchError::DimensionMismatch(format!(
            "flow {}x{} vs volume {}x{}",
            flow.height(),
            flow.width(),
            base.h1,
            base.w1
        )));
    }
    let side = 2 * radius + 1;
    let per_level = side * side;
    Ok((0..base.h1 * base.w1)
        .into_par_iter()
        .map(|p| {
            let (i, j) = (p / base.w1, p % base.w1);
            let f = flow.get(i, j);
            let target = Vector2::new(T::lit(j as f64), T::lit(i as f64)) + f;
            let mut out = vec![T::zero(); per_level * pyr.levels.len()];
            for (lvl, chunk) in out.chunks_exact_mut(per_level).enumerate() {
                pyr.window(lvl, i, j, target.x, target.y, radius, chunk);
            }
            out
        })
        .collect())
}
