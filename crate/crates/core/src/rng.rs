//! Seed derivation. Every random stream in a run is a ChaCha8 generator
//! keyed by a hash of (run seed, purpose, indices), so streams are stable
//! under changes to batch composition or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x1F0E_D5A1_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

// Purpose tags, mixed into derived seeds.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SHUFFLE: u64 = 2;
pub(crate) const TAG_AUGMENT: u64 = 3;
pub(crate) const TAG_NOISE: u64 = 4;
pub(crate) const TAG_SUBSAMPLE: u64 = 5;
pub(crate) const TAG_SYNTH: u64 = 6;
