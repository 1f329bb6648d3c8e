//! Deterministic random streams.
//!
//! Every random quantity in the crate (stub weights, prompt initialization,
//! scene layouts, proposal jitter, Bernoulli gates) is drawn from [`DetRng`],
//! a SplitMix64 generator with a 64-bit state. The derived distributions are
//! fixed so that other implementations can reproduce them bit for bit:
//!
//! * `uniform()`  = `(next_u64() >> 11) * 2^-53`, a value in `[0, 1)`.
//! * `gaussian()` = Box-Muller on two uniforms `u1, u2`:
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; the sine branch is discarded.
//! * `bernoulli(p)` = `uniform() < p`, exactly one draw.
//! * `below(n)` = `floor(uniform() * n)`, clamped to `n - 1`.
//! * `derive(seed, stream)` seeds a child stream from the first output of
//!   SplitMix64 seeded with `seed ^ (stream * 0x9E3779B97F4A7C15)`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct DetRng {
    inner: SplitMix64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Child stream for `(seed, stream)`; used for per-scene and per-purpose seeds.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut parent = SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(GOLDEN));
        Self::new(parent.next_u64())
    }

    /// Child stream for item `index` of `(seed, stream)`, e.g. one scene.
    pub fn indexed(seed: u64, stream: u64, index: u64) -> Self {
        let base = Self::derive(seed, stream).next_u64();
        Self::derive(base, index.wrapping_add(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.gaussian()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Integer in the inclusive range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn gaussian_vec(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.gaussian()).collect()
    }
}

/// Purpose tags for derived streams, so two subsystems never share draws.
pub mod stream {
    pub const VOCAB: u64 = 1;
    pub const TEXT_PROJ: u64 = 2;
    pub const VISUAL_PROJ: u64 = 3;
    pub const PROMPT_INIT: u64 = 4;
    pub const WORLD: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const VALIDATION: u64 = 7;
    pub const STAGE2: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const EXPORT: u64 = 10;
    pub const WARMUP: u64 = 11;
}
