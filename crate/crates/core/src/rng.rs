//! Named, seedable random streams.
//!
//! Every stochastic operation in the crate draws from a [`Stream`] that is
//! derived from a master seed and a stream name. ChaCha is a counter-based
//! generator, so the name selects the ChaCha stream id and the master seed
//! the key; two streams with different names never share a keystream.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Master seed for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Seed(pub u64);

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A deterministic random stream identified by `(seed, name)`.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: Seed, name: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
        rng.set_stream(fnv1a(name.as_bytes()));
        Stream { rng }
    }

    /// Derives a child stream; the child's identity depends on this stream's
    /// seed, its name and `index`, not on how much of the parent was consumed.
    pub fn fork(seed: Seed, name: &str, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.0 ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng.set_stream(fnv1a(name.as_bytes()) ^ index);
        Stream { rng }
    }

    /// Standard normal draw (Box-Muller, one value per pair of uniforms).
    /// Goes through `libm` so results do not depend on which float
    /// backend the rest of the build links.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
