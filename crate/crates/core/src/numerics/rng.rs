//! Counter-based deterministic random streams.
//!
//! Every consumer derives its own stream from `(master_seed, index)`, so
//! dataset generation and training are order-independent and parallelizable:
//! sample `i` draws from stream `i` no matter which worker produces it, and
//! regenerating with the same master seed is bit-identical.

use num_complex::Complex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::C64;

/// Namespaces for stream indices, so independent consumers of the same master
/// seed can never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// One stream per generated channel sample, keyed by sample ordinal.
    Channel = 1,
    /// Observation noise, keyed by (SNR slot, sample ordinal).
    Noise = 2,
    /// Network parameter initialization, keyed by layer ordinal.
    Init = 3,
    /// Epoch-level shuffling, keyed by epoch.
    Shuffle = 4,
    /// Anything else (tests, ad-hoc draws).
    Misc = 5,
}

/// A single deterministic random stream.
///
/// The stream cipher key is derived by hashing `(seed, index)`, so distinct
/// indices give statistically independent streams and identical pairs
/// reproduce identical draws bit-for-bit.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Stream for `(domain, ordinal)`; ordinal must fit in 56 bits.
    pub fn for_ordinal(seed: u64, domain: StreamDomain, ordinal: u64) -> Self {
        debug_assert!(ordinal < (1 << 56));
        Self::new(seed, ((domain as u64) << 56) | ordinal)
    }

    /// Stream for `(domain, slot, ordinal)`, e.g. noise at SNR slot `s` for
    /// sample `i`. Ordinal must fit in 40 bits, slot in 16.
    pub fn for_slot(seed: u64, domain: StreamDomain, slot: u16, ordinal: u64) -> Self {
        debug_assert!(ordinal < (1 << 40));
        Self::new(
            seed,
            ((domain as u64) << 56) | ((slot as u64) << 40) | ordinal,
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly symmetric complex normal with unit total variance,
    /// i.e. real and imaginary parts each `N(0, 1/2)`.
    pub fn cn01(&mut self) -> C64 {
        const HALF_SQRT: f64 = std::f64::consts::FRAC_1_SQRT_2;
        Complex::new(self.normal() * HALF_SQRT, self.normal() * HALF_SQRT)
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }
}
