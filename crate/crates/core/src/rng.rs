//! Seeded pseudo-random source.
//!
//! All randomness flows through [`DetRng`], a SplitMix64 stream. SplitMix64 is a
//! 64-bit counter-based generator (state advances by the golden-ratio increment and
//! each output is a fixed mix of the counter), so sequences are identical on every
//! platform. [`DetRng::split`] derives an independent child stream, which lets each
//! component own its randomness without perturbing the others.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct DetRng(SplitMix64);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    /// Child stream seeded from the next output of this one.
    pub fn split(&mut self) -> Self {
        Self::new(self.0.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    /// Uniform index in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.0);
    }

    pub fn permutation(&mut self, n: usize) -> alloc::vec::Vec<usize> {
        let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
