use nalgebra::Vector3;

/// splitmix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn hash_coords(seed: u64, coords: &[i64]) -> u64 {
    coords.iter().fold(mix64(seed), |h, &c| mix64(h ^ (c as u64)))
}

/// Uniform value in `[0, 1)` from a hash.
#[inline]
pub(crate) fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Standard normal sample from two hashed uniforms (Box-Muller).
pub(crate) fn gaussian(seed: u64, coords: &[i64]) -> f64 {
    let h = hash_coords(seed, coords);
    let u1 = unit(h).max(1e-300);
    let u2 = unit(mix64(h));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Multi-octave value noise evaluated on surface points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub seed: u64,
    /// Lattice frequency of the first octave, in cycles per scene unit.
    pub frequency: f64,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
}

impl Default for Texture {
    fn default() -> Self {
        Self { seed: 7, frequency: 8.0, octaves: 4, persistence: 0.5 }
    }
}

impl Texture {
    fn lattice_noise(&self, p: &Vector3<f64>, octave: u32) -> f64 {
        let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
        let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
        let (tx, ty, tz) = (fade(p.x - fx), fade(p.y - fy), fade(p.z - fz));
        let seed = self.seed ^ ((octave as u64) << 48);
        let v = |dx: i64, dy: i64, dz: i64| unit(hash_coords(seed, &[ix + dx, iy + dy, iz + dz]));
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let x00 = lerp(v(0, 0, 0), v(1, 0, 0), tx);
        let x10 = lerp(v(0, 1, 0), v(1, 1, 0), tx);
        let x01 = lerp(v(0, 0, 1), v(1, 0, 1), tx);
        let x11 = lerp(v(0, 1, 1), v(1, 1, 1), tx);
        lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
    }

    /// Noise value in `[0, 1]` at a scene point.
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let mut amp = 1.0;
        let mut freq = self.frequency;
        let (mut sum, mut norm) = (0.0, 0.0);
        for o in 0..self.octaves.max(1) {
            sum += amp * self.lattice_noise(&(p * freq), o);
            norm += amp;
            amp *= self.persistence;
            freq *= 2.0;
        }
        (sum / norm).clamp(0.0, 1.0)
    }

    /// Intensity used for rendering: noise mapped into `[0.1, 0.9]`.
    pub fn intensity(&self, p: &Vector3<f64>) -> f64 {
        0.1 + 0.8 * self.sample(p)
    }
}
