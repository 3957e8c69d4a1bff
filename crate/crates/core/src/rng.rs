//! Seed derivation. One master seed fans out to every stage and model through
//! `derive_seed`, so a run is replayable from a single number.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit hash of `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// FNV-1a of a label, for deriving named streams (`"init"`, record ids, ...).
pub fn label_stream(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn derive_named(seed: u64, label: &str) -> u64 {
    derive_seed(seed, label_stream(label))
}

pub fn seeded(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}
