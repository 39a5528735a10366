//! Deterministic pseudorandom streams.
//!
//! Every stochastic routine takes an [`Rng`], a thin wrapper around ChaCha8
//! seeded from a `u64`. ChaCha8 output is specified bit-for-bit, so a seed
//! reproduces the same sequence on every platform. Independent sub-streams
//! (for example one per anchor) are derived with [`Rng::stream`], which
//! selects a distinct ChaCha stream id under the same key.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, id)`; unaffected by draws from `self`.
    pub fn stream(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(id);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform integer in `[0, n)`. Sampled through `u64` so the result does
    /// not depend on the platform's pointer width.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below called with n == 0");
        self.inner.random_range(0..n as u64) as usize
    }

    /// Uniform float in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
