use super::MatchError;
use crate::Real;

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 16;

/// Interleaved `height × width × channels` intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T: Real> {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<T>) -> Result<Self, MatchError> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(MatchError::ImageTooSmall { width, height, min: MIN_IMAGE_SIDE });
        }
        if channels == 0 || pixels.len() != width * height * channels {
            return Err(MatchError::DimensionMismatch(format!(
                "{}x{}x{} image needs {} values, got {}",
                height,
                width,
                channels,
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(pos) = pixels.iter().position(|v| !(v.is_finite_real() && *v >= T::zero() && *v <= T::one())) {
            return Err(MatchError::InvalidPixel { index: pos });
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// Single-channel image from a closure over `(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self, MatchError> {
        let mut px = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                px.push(f(r, c));
            }
        }
        Self::new(width, height, 1, px)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    /// Channel mean per pixel.
    pub fn to_gray(&self) -> Vec<T> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        let inv = T::one() / T::lit(self.channels as f64);
        self.pixels
            .chunks_exact(self.channels)
            .map(|px| px.iter().fold(T::zero(), |a, &b| a + b) * inv)
            .collect()
    }

    pub fn mirrored_horizontally(&self) -> Self {
        let mut out = self.clone();
        let c = self.channels;
        for r in 0..self.height {
            for x in 0..self.width {
                let src = (r * self.width + (self.width - 1 - x)) * c;
                let dst = (r * self.width + x) * c;
                out.pixels[dst..dst + c].copy_from_slice(&self.pixels[src..src + c]);
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self.pixels.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
