//! Seeded randomness: per-purpose RNG streams and smooth band-limited fields.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent RNG streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Specimen = 1,
    Noise = 2,
    Calibration = 3,
    Batch = 4,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Sum of plane cosine waves sharing one wavelength, with random directions
/// and phases.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    waves: Vec<[f64; 3]>,
    scale: f64,
}

impl WaveField {
    fn draw<R: Rng + ?Sized>(rng: &mut R, wavelength: f64, count: usize, scale: f64) -> Self {
        let k = TAU / wavelength;
        let waves = (0..count)
            .map(|_| {
                let dir: f64 = rng.gen_range(0.0..TAU);
                let phase: f64 = rng.gen_range(0.0..TAU);
                [k * dir.cos(), k * dir.sin(), phase]
            })
            .collect();
        Self { waves, scale }
    }

    /// Field bounded in `[-1, 1]`.
    pub fn bounded<R: Rng + ?Sized>(rng: &mut R, wavelength: f64, count: usize) -> Self {
        Self::draw(rng, wavelength, count, 1.0 / count as f64)
    }

    /// Zero-mean field with unit variance at every point (over draws).
    pub fn unit_variance<R: Rng + ?Sized>(rng: &mut R, wavelength: f64, count: usize) -> Self {
        Self::draw(rng, wavelength, count, (2.0 / count as f64).sqrt())
    }

    pub fn zero() -> Self {
        Self {
            waves: Vec::new(),
            scale: 0.0,
        }
    }

    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let sum: f64 = self
            .waves
            .iter()
            .map(|[kx, ky, phase]| (kx * x + ky * y + phase).cos())
            .sum();
        sum * self.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_field_stays_in_unit_interval() {
        let mut rng = rng_for(7, Stream::Specimen);
        let f = WaveField::bounded(&mut rng, 5e-3, 6);
        for i in 0..200 {
            let x = i as f64 * 1e-4 - 1e-2;
            assert!(f.value(x, 0.3 * x).abs() <= 1.0);
        }
    }

    #[test]
    fn unit_variance_over_draws() {
        let mut rng = rng_for(11, Stream::Noise);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = WaveField::unit_variance(&mut rng, 4e-3, 8).value(1e-3, 2e-3);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn streams_differ() {
        let a: u64 = rng_for(1, Stream::Specimen).gen();
        let b: u64 = rng_for(1, Stream::Noise).gen();
        let c: u64 = rng_for(1, Stream::Specimen).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
