//! Seeded, splittable randomness.
//!
//! Every stochastic operation in the crate takes either a `u64` seed or a
//! caller-owned [`ChaCha8Rng`]; there is no global RNG. Independent streams
//! are derived by mixing a salt into a base seed, so pipeline stages can be
//! re-run in isolation without perturbing each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Builds a reproducible generator from a seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministically picks `k` (or fewer) distinct indices out of `0..n`,
/// returned in ascending order.
pub fn choose_subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    idx.truncate(k.min(n));
    idx.sort_unstable();
    idx
}

/// Derives an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer over the combined value).
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn seeded_streams_are_reproducible() {
        let mut r1 = seeded(42);
        let mut r2 = seeded(42);
        let a: Vec<u64> = (0..8).map(|_| r1.random()).collect();
        let b: Vec<u64> = (0..8).map(|_| r2.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn derived_seeds_differ_per_salt() {
        let s = 7;
        assert_ne!(derive(s, 0), derive(s, 1));
        assert_ne!(derive(s, 1), derive(s, 2));
        // and are stable
        assert_eq!(derive(s, 3), derive(s, 3));
    }
}
