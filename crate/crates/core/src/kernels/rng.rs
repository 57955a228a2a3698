//! Deterministic random number generation.
//!
//! Every stochastic choice in the crate goes through [`SeededRng`], a thin
//! wrapper around the ChaCha8 counter-based generator (`rand_chacha`),
//! seeded from a single `u64` via `SeedableRng::seed_from_u64`. ChaCha8
//! produces the same stream on every platform and word size, so identical
//! seeds give bit-identical datasets, weights, and samples everywhere.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A seeded, reproducible random stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent stream for a tagged sub-task.
    ///
    /// Mixing is SplitMix64-style so that nearby (seed, tag) pairs land on
    /// unrelated streams.
    pub fn derive(seed: u64, tag: u64) -> Self {
        let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        Self::new(z ^ (z >> 31))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random_range(0.0..1.0)
    }

    /// Standard normal scaled by `std`, in f32.
    pub fn normal_f32(&mut self, std: f32) -> f32 {
        let z: f32 = StandardNormal.sample(&mut self.inner);
        z * std
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    /// Bernoulli draw.
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniformly choose one element.
    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    /// Weighted choice; weights need not be normalized.
    pub fn choose_weighted<'a, T>(&mut self, items: &'a [T], weights: &[f64]) -> &'a T {
        assert_eq!(items.len(), weights.len());
        let total: f64 = weights.iter().sum();
        let mut dart = self.uniform() * total;
        for (item, &w) in items.iter().zip(weights) {
            dart -= w;
            if dart <= 0.0 {
                return item;
            }
        }
        &items[items.len() - 1]
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_identical_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_tags_diverge() {
        let mut a = SeededRng::derive(7, 1);
        let mut b = SeededRng::derive(7, 2);
        let same = (0..32).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = SeededRng::new(0);
        for _ in 0..1000 {
            assert!(rng.below(7) < 7);
        }
    }

    #[test]
    fn weighted_choice_respects_zero_weight() {
        let mut rng = SeededRng::new(3);
        let items = [0usize, 1, 2];
        let weights = [0.0, 1.0, 0.0];
        for _ in 0..200 {
            assert_eq!(*rng.choose_weighted(&items, &weights), 1);
        }
    }
}
