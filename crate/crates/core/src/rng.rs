//! Seedable, platform-independent random source.
//!
//! Uniform bits come from ChaCha8 (`rand_chacha::ChaCha8Rng`), a counter-based
//! stream cipher whose output for a given `(seed, stream)` pair is fixed by its
//! definition. Normals use the Box–Muller transform evaluated with the
//! pure-Rust `libm` routines, so the normal stream does not depend on the host
//! C math library either.
//!
//! Sub-streams: `RngState::with_stream(seed, k)` selects ChaCha stream `k`
//! under the same key. Trajectory `i` of a batch and bootstrap resample `r`
//! each get their own stream, which makes results independent of thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound`.
    pub fn index(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    /// Fill `out` with standard normals. Draws are made in Box–Muller pairs;
    /// for odd lengths the second value of the last pair is discarded.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for chunk in out.chunks_mut(2) {
            // u1 in (0, 1] keeps the logarithm finite
            let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let u2 = self.uniform();
            let r = (-2.0 * libm::log(u1)).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            chunk[0] = r * libm::cos(theta);
            if let Some(second) = chunk.get_mut(1) {
                *second = r * libm::sin(theta);
            }
        }
    }
}
