//! Hand-crafted dense descriptor used in place of a learned encoder.
//!
//! Channel layout (`DESCRIPTOR_DIM` = 16):
//!
//! | index | content                                          |
//! |-------|--------------------------------------------------|
//! | 0     | difference of Gaussians, fine − background       |
//! | 1     | difference of Gaussians, coarse − background     |
//! | 2, 3  | x / y gradient at the fine scale                 |
//! | 4, 5  | x / y gradient at the coarse scale               |
//! | 6     | band-pass, background − broad                    |
//! | 7     | band-pass, broad − 2·broad                       |
//! | 8..16 | gradient-orientation histogram, 8 bins of 45°, zero-mean |
//!
//! Every channel is averaged over `scale × scale` pixel blocks and the
//! resulting vector is normalized to unit length.

use rayon::prelude::*;

use super::{ImageBuffer, MatchError};
use crate::Real;

pub const DESCRIPTOR_DIM: usize = 16;
const ORIENTATION_BINS: usize = 8;

const GAIN_DOG: f64 = 4.0;
const GAIN_GRADIENT: f64 = 8.0;
const GAIN_BROAD: f64 = 8.0;
const GAIN_ORIENTATION: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    /// Block size of the descriptor grid relative to the input image.
    pub scale: usize,
    pub sigma_fine: f64,
    pub sigma_coarse: f64,
    /// Blur of the local mean subtracted by the difference-of-Gaussians channels.
    pub sigma_background: f64,
    /// Scale of the two wide band-pass channels, which keep descriptors of
    /// nearby cells similar so that pooled correlations still peak.
    pub sigma_broad: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { scale: 4, sigma_fine: 1.0, sigma_coarse: 2.0, sigma_background: 4.0, sigma_broad: 8.0 }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<(), MatchError> {
        let ok = self.scale >= 1
            && self.sigma_fine > 0.0
            && self.sigma_coarse > 0.0
            && self.sigma_background > 0.0
            && self.sigma_broad > 0.0
            && [self.sigma_fine, self.sigma_coarse, self.sigma_background, self.sigma_broad].iter().all(|s| s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(MatchError::InvalidParameter(format!("{self:?}")))
        }
    }
}

/// Unit-norm descriptors on a `height × width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real> {
    width: usize,
    height: usize,
    dim: usize,
    scale: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    /// Wraps raw descriptors, normalizing each one to unit length.
    pub fn from_raw(width: usize, height: usize, dim: usize, scale: usize, mut data: Vec<T>) -> Result<Self, MatchError> {
        if dim == 0 || data.len() != width * height * dim {
            return Err(MatchError::DimensionMismatch(format!(
                "{height}x{width}x{dim} feature map needs {} values, got {}",
                width * height * dim,
                data.len()
            )));
        }
        data.chunks_exact_mut(dim).for_each(normalize_descriptor);
        Ok(Self { width, height, dim, scale, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn descriptor(&self, row: usize, col: usize) -> &[T] {
        let o = (row * self.width + col) * self.dim;
        &self.data[o..o + self.dim]
    }

    /// Bilinear sample at fractional grid coordinates. Returns `false`
    /// (leaving `out` untouched) outside `[0, w−1] × [0, h−1]`.
    pub fn sample(&self, x: T, y: T, out: &mut [T]) -> bool {
        let (xf, yf) = (x.floor(), y.floor());
        let (x0, y0) = (xf.as_f64(), yf.as_f64());
        let inside = x.as_f64() >= 0.0
            && y.as_f64() >= 0.0
            && x.as_f64() <= (self.width - 1) as f64
            && y.as_f64() <= (self.height - 1) as f64;
        if !inside {
            return false;
        }
        let (c0, r0) = (x0 as usize, y0 as usize);
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let ax = x - xf;
        let ay = y - yf;
        let one = T::one();
        let w = [(one - ax) * (one - ay), ax * (one - ay), (one - ax) * ay, ax * ay];
        let taps = [self.descriptor(r0, c0), self.descriptor(r0, c1), self.descriptor(r1, c0), self.descriptor(r1, c1)];
        for (d, o) in out.iter_mut().enumerate() {
            *o = w[0] * taps[0][d] + w[1] * taps[1][d] + w[2] * taps[2][d] + w[3] * taps[3][d];
        }
        true
    }

    /// Circular shift: output cell `(r, c)` takes the descriptor at
    /// `(r − dy, c − dx)` (mod size).
    pub fn shifted_circular(&self, dx: isize, dy: isize) -> Self {
        let mut out = self.clone();
        let (w, h) = (self.width as isize, self.height as isize);
        for r in 0..h {
            for c in 0..w {
                let sr = (r - dy).rem_euclid(h) as usize;
                let sc = (c - dx).rem_euclid(w) as usize;
                let dst = (r as usize * self.width + c as usize) * self.dim;
                out.data[dst..dst + self.dim].copy_from_slice(self.descriptor(sr, sc));
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            width: self.width,
            height: self.height,
            dim: self.dim,
            scale: self.scale,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

fn normalize_descriptor<T: Real>(d: &mut [T]) {
    let n2 = d.iter().fold(T::zero(), |a, &v| a + v * v);
    if n2 > T::lit(1e-24) {
        let inv = T::one() / n2.sqrt();
        d.iter_mut().for_each(|v| *v *= inv);
    } else {
        // Featureless input: every such cell gets the same unit vector.
        let u = T::one() / T::lit(d.len() as f64).sqrt();
        d.iter_mut().for_each(|v| *v = u);
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur<T: Real>(src: &[T], width: usize, height: usize, sigma: f64) -> Vec<T> {
    let k: Vec<T> = gaussian_kernel(sigma).into_iter().map(T::lit).collect();
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![T::zero(); src.len()];
    tmp.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * src[y * width + clamp(x as isize + i as isize - r, width)];
            }
            *o = acc;
        }
    });
    let mut out = vec![T::zero(); src.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[clamp(y as isize + i as isize - r, height) * width + x];
            }
            *o = acc;
        }
    });
    out
}

/// Dense unit-norm descriptors at `1/scale` resolution.
pub fn extract_features<T: Real>(img: &ImageBuffer<T>, params: &FeatureParams) -> Result<FeatureMap<T>, MatchError> {
    params.validate()?;
    let (w, h, s) = (img.width(), img.height(), params.scale);
    if w / s < 2 || h / s < 2 {
        return Err(MatchError::ImageTooSmall { width: w, height: h, min: 2 * s });
    }
    let gray = img.to_gray();
    let fine = blur(&gray, w, h, params.sigma_fine);
    let coarse = blur(&gray, w, h, params.sigma_coarse);
    let background = blur(&gray, w, h, params.sigma_background);
    let broad = blur(&gray, w, h, params.sigma_broad);
    let widest = blur(&gray, w, h, 2.0 * params.sigma_broad);

    let (gw, gh) = (w / s, h / s);
    let half = T::lit(0.5);
    let bin_width = T::two_pi() / T::lit(ORIENTATION_BINS as f64);
    let gains = [
        GAIN_DOG,
        GAIN_DOG,
        GAIN_GRADIENT,
        GAIN_GRADIENT,
        GAIN_GRADIENT,
        GAIN_GRADIENT,
        GAIN_BROAD,
        GAIN_BROAD,
    ]
    .map(T::lit);
    let orientation_gain = T::lit(GAIN_ORIENTATION);
    let inv_area = T::one() / T::lit((s * s) as f64);

    let mut data = vec![T::zero(); gw * gh * DESCRIPTOR_DIM];
    data.par_chunks_mut(gw * DESCRIPTOR_DIM).enumerate().for_each(|(gy, row)| {
        let at = |img: &[T], x: isize, y: isize| {
            img[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize]
        };
        for gx in 0..gw {
            let d = &mut row[gx * DESCRIPTOR_DIM..(gx + 1) * DESCRIPTOR_DIM];
            for py in gy * s..(gy + 1) * s {
                for px in gx * s..(gx + 1) * s {
                    let (x, y) = (px as isize, py as isize);
                    let b1 = at(&fine, x, y);
                    let b2 = at(&coarse, x, y);
                    let bg = at(&background, x, y);
                    let g1x = (at(&fine, x + 1, y) - at(&fine, x - 1, y)) * half;
                    let g1y = (at(&fine, x, y + 1) - at(&fine, x, y - 1)) * half;
                    let g2x = (at(&coarse, x + 1, y) - at(&coarse, x - 1, y)) * half;
                    let g2y = (at(&coarse, x, y + 1) - at(&coarse, x, y - 1)) * half;
                    let b3 = at(&broad, x, y);
                    let ch = [b1 - bg, b2 - bg, g1x, g1y, g2x, g2y, bg - b3, b3 - at(&widest, x, y)];
                    for i in 0..8 {
                        d[i] += ch[i] * gains[i];
                    }
                    let mag = (g1x * g1x + g1y * g1y).sqrt();
                    if mag > T::zero() {
                        let mut theta = g1y.atan2(g1x);
                        if theta < T::zero() {
                            theta += T::two_pi();
                        }
                        let pos = theta / bin_width;
                        let lo = pos.floor();
                        let frac = pos - lo;
                        let lo = (lo.as_f64() as usize) % ORIENTATION_BINS;
                        let hi = (lo + 1) % ORIENTATION_BINS;
                        d[8 + lo] += mag * (T::one() - frac) * orientation_gain;
                        d[8 + hi] += mag * frac * orientation_gain;
                    }
                }
            }
            d.iter_mut().for_each(|v| *v *= inv_area);
            // Only the shape of the histogram is kept; its mean is nearly the
            // same in every textured cell and would swamp the cosine.
            let mean = d[8..].iter().fold(T::zero(), |a, &v| a + v) / T::lit(ORIENTATION_BINS as f64);
            d[8..].iter_mut().for_each(|v| *v -= mean);
            normalize_descriptor(d);
        }
    });
    Ok(FeatureMap { width: gw, height: gh, dim: DESCRIPTOR_DIM, scale: s, data })
}
