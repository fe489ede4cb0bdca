//! Seed derivation. Every random stream is ChaCha8 keyed by a splitmix64
//! hash of `(seed, purpose, a, b)`, so results do not depend on evaluation
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed ^ 0xC3A5) ^ purpose) ^ a.wrapping_mul(0x1000_0001) ^ b)
}

pub fn stream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, a, b))
}
