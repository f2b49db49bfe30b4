//! Splittable, reproducible random number streams.
//!
//! Every stochastic routine in the crate takes an explicit [`RngState`].
//! A state is created from a `u64` seed and can be split into independent
//! child streams, so chains, units, ensemble members and CV folds each own
//! their own stream and results do not depend on evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; decorrelates stream ids before they reach ChaCha.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes an id into a seed; used to give refits and folds their own
/// deterministic seeds.
pub fn derive_seed(seed: u64, id: u64) -> u64 {
    mix64(seed ^ mix64(id.wrapping_add(0x517c_c1b7_2722_0a95)))
}

/// A seeded ChaCha stream that can be split into independent children.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// Derives an independent child stream. Children of distinct `(parent
    /// stream, id)` pairs never collide in practice: ids are mixed through
    /// SplitMix64 before becoming ChaCha stream numbers.
    pub fn split(&self, id: u64) -> Self {
        let stream = mix64(self.stream ^ mix64(id.wrapping_add(1)));
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random bits scaled into [0, 1).
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on (0, 1]; safe to pass to `ln`.
    pub fn uniform_pos(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn uniform_range(&mut self, lower: f64, upper: f64) -> f64 {
        lower + (upper - lower) * self.uniform()
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
