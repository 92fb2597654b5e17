//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed derived from a base seed, a stream label and an
//! index, so results never depend on call order across streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for the stream `(label, index)` under `base`.
pub fn derive(base: u64, label: &str, index: u64) -> u64 {
    let mut h = splitmix(base);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h ^ splitmix(index))
}

/// Derives a seed from a string key, e.g. a content identifier.
pub fn derive_str(base: u64, label: &str, key: &str) -> u64 {
    let mut h = derive(base, label, 0);
    for b in key.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    h
}

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(base: u64, label: &str, index: u64) -> SimRng {
    rng(derive(base, label, index))
}
