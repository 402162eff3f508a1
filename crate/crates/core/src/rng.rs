//! Seeded randomness. Every draw in the engine goes through an explicitly
//! seeded generator; there is no process-global RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Mixes a base seed with a stream tag and an index (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normals(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub(crate) const STREAM_CLEAN: u64 = 1;
pub(crate) const STREAM_CORRUPT: u64 = 2;
pub(crate) const STREAM_INITIAL: u64 = 3;
pub(crate) const STREAM_RENOISE: u64 = 4;
pub(crate) const STREAM_DECOMPOSE: u64 = 5;
