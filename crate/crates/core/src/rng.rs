//! Seeded randomness.
//!
//! Every stochastic operation takes an explicit [`RandomSource`]; nothing
//! reads from thread-local or OS entropy, so runs are reproducible from
//! their seeds alone.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RandomSource = ChaCha8Rng;

pub fn source(seed: u64) -> RandomSource {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of keys, e.g.
/// `(eval seed, config index, episode)`.
pub fn derive(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix(seed), |acc, &k| mix(acc ^ mix(k)))
}

/// Short fingerprint of a generator's current state: the next word it would
/// produce, without advancing it.
pub fn digest(rng: &RandomSource) -> String {
    let mut probe = rng.clone();
    format!("{:016x}", probe.next_u64())
}

/// Uniform draw from the open interval (0, 1).
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        // 53 random mantissa bits, offset by half an ulp so 0 is impossible.
        let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}
