//! Deterministic seed derivation. Every stage of the pipeline derives its
//! RNG stream from (global seed, stage tag, indices), so results do not
//! depend on call order or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a parent seed, a stage tag, and two indices.
pub fn derive(seed: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut x = splitmix64(seed ^ fnv1a(tag));
    x = splitmix64(x ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    splitmix64(x ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f))
}

/// RNG for a derived stream.
pub fn rng(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, a, b))
}

/// Uniform in [0, 1) from a single derived seed, without constructing an RNG.
/// Used for per-cell texture multipliers.
pub fn unit_from_seed(seed: u64, a: u64, b: u64) -> f64 {
    let bits = splitmix64(splitmix64(seed ^ a).wrapping_add(b));
    // 53 high bits -> [0, 1)
    (bits >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable_and_tag_sensitive() {
        assert_eq!(derive(7, "x", 1, 2), derive(7, "x", 1, 2));
        assert_ne!(derive(7, "x", 1, 2), derive(7, "y", 1, 2));
        assert_ne!(derive(7, "x", 1, 2), derive(7, "x", 2, 1));
        assert_ne!(derive(7, "x", 0, 0), derive(8, "x", 0, 0));
    }

    #[test]
    fn unit_from_seed_in_range() {
        for i in 0..1000 {
            let u = unit_from_seed(42, i, i * 3 + 1);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
