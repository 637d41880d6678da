use nalgebra::Vector2;
use rayon::prelude::*;

use super::{FeatureMap, MatchError};
use crate::geom::Match;
use crate::Real;

fn cosine<T: Real>(a: &[T], b: &FeatureMap<T>, x: isize, y: isize) -> Option<T> {
    if x < 0 || y < 0 || x as usize >= b.width() || y as usize >= b.height() {
        return None;
    }
    Some(a.iter().zip(b.descriptor(y as usize, x as usize)).fold(T::zero(), |s, (&u, &v)| s + u * v))
}

fn vertex<T: Real>(l: T, c: T, r: T) -> T {
    let d = l - c * T::lit(2.0) + r;
    if d < T::zero() {
        let half = T::lit(0.5);
        ((l - r) / (d * T::lit(2.0))).max(-half).min(half)
    } else {
        T::zero()
    }
}

/// Re-locates each match target on full-resolution descriptors: the best
/// cosine within `radius` pixels of the rounded target, moved to the vertex
/// of a per-axis parabola through its neighbours. `f1` and `f2` must have
/// scale 1. Matches whose source pixel falls outside `f1` are dropped.
pub fn refine_matches<T: Real>(f1: &FeatureMap<T>, f2: &FeatureMap<T>, matches: &[Match<T>], radius: usize) -> Result<Vec<Match<T>>, MatchError> {
    if f1.scale() != 1 || f2.scale() != 1 {
        return Err(MatchError::InvalidParameter("match refinement needs scale-1 descriptors".into()));
    }
    if f1.dim() != f2.dim() {
        return Err(MatchError::DimensionMismatch("descriptor dimensions differ".into()));
    }
    let r = radius as isize;
    Ok(matches
        .par_iter()
        .filter_map(|m| {
            let (sx, sy) = (m.x.x.round().as_f64(), m.x.y.round().as_f64());
            if !(sx >= 0.0 && sy >= 0.0 && sx < f1.width() as f64 && sy < f1.height() as f64) {
                return None;
            }
            let a = f1.descriptor(sy as usize, sx as usize);
            let (cx, cy) = (m.x_prime.x.round().as_f64() as isize, m.x_prime.y.round().as_f64() as isize);
            let mut best: Option<(isize, isize, T)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    if let Some(s) = cosine(a, f2, cx + dx, cy + dy) {
                        if best.is_none_or(|b| s > b.2) {
                            best = Some((cx + dx, cy + dy, s));
                        }
                    }
                }
            }
            let (bx, by, s) = best?;
            let at = |x, y| cosine(a, f2, x, y);
            let ox = match (at(bx - 1, by), at(bx + 1, by)) {
                (Some(l), Some(r)) => vertex(l, s, r),
                _ => T::zero(),
            };
            let oy = match (at(bx, by - 1), at(bx, by + 1)) {
                (Some(l), Some(r)) => vertex(l, s, r),
                _ => T::zero(),
            };
            // Keep the sub-pixel part of the source position.
            let frac = m.x - Vector2::new(T::lit(sx), T::lit(sy));
            let x_prime = Vector2::new(T::lit(bx as f64) + ox, T::lit(by as f64) + oy) + frac;
            Some(Match { x: m.x, x_prime, weight: s.max(T::zero()).min(T::one()) })
        })
        .collect())
}
