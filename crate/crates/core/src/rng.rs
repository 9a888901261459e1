//! Derived random streams: every consumer seeds its own generator from the
//! global seed plus a tuple of indices, so results do not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with `parts` into a 64-bit stream key.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn derive_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// FNV-1a, used to turn labels into stream indices.
pub fn label(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = derive_rng(1, &[2, 3]).random();
        let b: u64 = derive_rng(1, &[2, 3]).random();
        let c: u64 = derive_rng(1, &[3, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(1, &[]), derive_seed(2, &[]));
    }
}
