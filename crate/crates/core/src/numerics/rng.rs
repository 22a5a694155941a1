//! Seeded, splittable random source.
//!
//! Every stream is identified by a 64-bit key. Child streams are derived from the
//! parent's key and a label only, so splitting never consumes or perturbs the
//! parent's draw sequence. Parallel work that splits by index therefore produces
//! the same numbers whatever the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RandomSource {
    key: u64,
    rng: ChaCha8Rng,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::from_key(splitmix64(seed))
    }

    fn from_key(key: u64) -> Self {
        Self { key, rng: ChaCha8Rng::seed_from_u64(key) }
    }

    /// Stream identity. Recorded in episode dumps so any stream can be replayed.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Rebuild a stream from a recorded key.
    pub fn from_recorded_key(key: u64) -> Self {
        Self::from_key(key)
    }

    pub fn split(&self, label: &str) -> Self {
        Self::from_key(splitmix64(self.key ^ fnv1a(label.as_bytes()).rotate_left(17)))
    }

    pub fn split_indexed(&self, label: &str, index: u64) -> Self {
        let k = splitmix64(self.key ^ fnv1a(label.as_bytes()).rotate_left(17));
        Self::from_key(splitmix64(k ^ splitmix64(index.wrapping_add(0x51_7cc1_b727_220a))))
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal2(&mut self) -> [f64; 2] {
        [self.normal(), self.normal()]
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.rng.random_range(0..n)
    }

    /// Draw an index from a probability vector by inverse CDF.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left a sliver above the last cumulative sum
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }
}
