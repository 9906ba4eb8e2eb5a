//! Seeded random number generation.
//!
//! The generator is ChaCha8 (`rand_chacha` 0.3, seeded through
//! `SeedableRng::seed_from_u64`). Its output stream is specified
//! independently of platform and word size, so a seed reproduces the same
//! samples everywhere. Normal samples use the `rand_distr` 0.4 ziggurat
//! sampler on top of that stream. Changing either crate's major version is a
//! breaking change to every stored seed.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Name recorded alongside reproducibility claims.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.3";

/// Single-consumer deterministic generator. Parallel code must [`Rng::fork`]
/// rather than share one stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-stream `stream` of this seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng { seed: self.seed, inner }
    }

    /// `count` samples from N(mean, stddev²). A zero stddev returns `mean` exactly.
    pub fn normal(&mut self, mean: f64, stddev: f64, count: usize) -> Vec<f64> {
        debug_assert!(stddev >= 0.0);
        (0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.inner);
                mean + stddev * z
            })
            .collect()
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.gen_range(0..bound)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
