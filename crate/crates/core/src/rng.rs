//! Seeded random streams.
//!
//! All randomness is derived from a top-level seed plus a stream name, so
//! independent consumers never share a generator and parallel execution
//! cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the seed bytes followed by every part, with a separator.
fn mix(seed: u64, parts: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for p in parts {
        for b in p.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Generator for a named substream of `seed`.
pub fn substream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}

/// Derived integer seed for a named substream.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    mix(seed, parts)
}
