//! Seed derivation.
//!
//! A run has one master seed. Each stage draws from its own named stream,
//! `splitmix64(master ^ fnv1a64(name))`, so changing how much randomness one
//! stage consumes never shifts another stage. Per-tree streams inside a forest
//! are `splitmix64(forest_seed + GOLDEN * (tree + 1))`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// Seed of the named sub-stream of `master`.
pub fn derive(master: u64, stream: &str) -> u64 {
    splitmix64(master ^ fnv1a64(stream))
}

/// Seed of the `index`-th child of `seed` (trees, trials).
pub fn child(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(GOLDEN.wrapping_mul(index + 1)))
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(7, "data"), derive(7, "localizer"));
        assert_eq!(derive(7, "data"), derive(7, "data"));
        assert_ne!(child(1, 0), child(1, 1));
    }
}
