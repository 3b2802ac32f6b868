//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! keyed by a seed derived from the global seed plus a purpose tag, so streams
//! never overlap and results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tag and a list of indices into a new seed.
pub fn derive(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for b in tag.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    for &i in indices {
        h = splitmix64(h ^ i.wrapping_mul(GOLDEN));
    }
    h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
