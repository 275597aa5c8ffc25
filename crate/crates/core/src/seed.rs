//! Stable seed derivation.
//!
//! Every random stream in the pipeline is keyed by the global seed plus a task
//! key (map id, episode index, step, ...), so the order in which workers pick up
//! tasks never changes the numbers they draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a; only used to fold string keys into a `u64`.
fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Mixes `key` into `base`.
pub fn derive(base: u64, key: u64) -> u64 {
    splitmix64(base ^ splitmix64(key))
}

pub fn derive_str(base: u64, key: &str) -> u64 {
    derive(base, hash_str(key))
}

pub fn derive_path(base: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(base, |s, &k| derive(s, k))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
