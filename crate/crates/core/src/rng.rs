//! Reproducible random streams.
//!
//! Every replica owns a stream addressed by `(master_seed, stream_id)`. The
//! stream is a ChaCha8 keystream: the key is expanded from the master seed
//! and the 64-bit ChaCha stream selector is the stream id, so the generator is
//! counter based and replicas can run in any order on any number of threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub const fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> StreamRng {
        let mut key = [0u8; 32];
        let mut state = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Stream for sub-task `index` of this stream. Used for the
    /// (master, sample, path) hierarchy of interlacement samples.
    pub fn child(&self, index: u64) -> SeedSpec {
        let folded = mix64(self.master_seed ^ mix64(self.stream_id.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d));
        SeedSpec {
            master_seed: folded,
            stream_id: index,
        }
    }
}

/// Source of the Gaussian and uniform draws consumed by the samplers.
///
/// The production implementation is [`StreamRng`]; [`ZeroNoise`] exists so
/// that tests can freeze a path in place.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
    /// Uniform on the open interval (0, 1).
    fn uniform(&mut self) -> f64;
}

impl NoiseSource for ChaCha8Rng {
    #[inline]
    fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    #[inline]
    fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.random();
            if u > 0.0 {
                return u;
            }
        }
    }
}

/// Every Gaussian draw is zero; uniforms are 1/2.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }

    fn uniform(&mut self) -> f64 {
        0.5
    }
}

/// Poisson draw for the path count of an interlacement sample.
pub fn poisson(rng: &mut StreamRng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        // Knuth's product method.
        let limit = libm::exp(-mean);
        let mut k = 0u64;
        let mut prod = rng.uniform();
        while prod > limit {
            k += 1;
            prod *= rng.uniform();
        }
        return k;
    }
    let dist = rand_distr::Poisson::new(mean).expect("finite positive mean");
    let draw: f64 = dist.sample(rng);
    draw as u64
}

/// Raw 64-bit draw, used for hashing-free shuffles in tests and tools.
pub fn next_u64(rng: &mut StreamRng) -> u64 {
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_specs_reproduce() {
        let a = SeedSpec::new(7, 3);
        let mut r1 = a.rng();
        let mut r2 = a.rng();
        for _ in 0..100 {
            assert_eq!(r1.standard_normal().to_bits(), r2.standard_normal().to_bits());
        }
    }

    #[test]
    fn streams_differ() {
        let mut r1 = SeedSpec::new(7, 3).rng();
        let mut r2 = SeedSpec::new(7, 4).rng();
        let same = (0..64).filter(|_| r1.next_u64() == r2.next_u64()).count();
        assert_eq!(same, 0);
        let c1 = SeedSpec::new(7, 3).child(0);
        let c2 = SeedSpec::new(7, 4).child(0);
        assert_ne!(c1, c2);
    }

    #[test]
    fn poisson_moments() {
        let mut rng = SeedSpec::new(1, 1).rng();
        for &mean in &[3.5, 62.8] {
            let n = 20_000;
            let draws: alloc::vec::Vec<f64> = (0..n).map(|_| poisson(&mut rng, mean) as f64).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let v = draws.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            let se = libm::sqrt(mean / n as f64);
            assert!((m - mean).abs() < 4.0 * se, "mean {m} vs {mean}");
            assert!((v / mean - 1.0).abs() < 0.05, "variance {v} vs {mean}");
        }
    }
}
