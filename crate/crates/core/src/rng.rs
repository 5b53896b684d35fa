//! Deterministic uniform stream and the draws built on top of it.
//!
//! Every random quantity in the crate comes from a xoshiro256++ generator
//! seeded through `seed_from_u64` (SplitMix64 expansion). Non-uniform draws
//! use the inverse-CDF method: a uniform `u` in (0, 1) is mapped through the
//! quantile function of the target distribution.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::function::erf::erfc_inv;

const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct UniformStream {
    rng: Xoshiro256PlusPlus,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Uniform in the open interval (0, 1), on a 2^-53 grid offset by half a step.
    pub fn next_open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_MINUS_53
    }

    /// Inverse CDF of the discrete uniform distribution on `0..n`.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let idx = (self.next_open01() * n as f64) as usize;
        idx.min(n - 1)
    }

    /// Standard normal via its quantile function, `-sqrt(2) * erfc^-1(2u)`.
    pub fn next_standard_normal(&mut self) -> f64 {
        let u = self.next_open01();
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
    }

    /// Index into a categorical distribution given its cumulative weights.
    ///
    /// `cumulative` must be non-decreasing with a positive final entry.
    pub fn next_categorical(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("non-empty distribution");
        let target = self.next_open01() * total;
        let pos = cumulative.partition_point(|&c| c <= target);
        pos.min(cumulative.len() - 1)
    }

    /// `count` distinct indices drawn uniformly from `0..n`, returned ascending.
    ///
    /// Each draw picks position `next_index(remaining)` in the not-yet-chosen
    /// pool (a partial Fisher-Yates shuffle).
    pub fn sample_without_replacement(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot draw {count} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for t in 0..count {
            let j = t + self.next_index(n - t);
            pool.swap(t, j);
        }
        pool.truncate(count);
        pool.sort_unstable();
        pool
    }

    /// Uniform random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        for t in 0..n.saturating_sub(1) {
            let j = t + self.next_index(n - t);
            pool.swap(t, j);
        }
        pool
    }
}
