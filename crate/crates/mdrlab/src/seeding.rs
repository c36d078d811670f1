//! Deterministic seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator seeded from
//! `derive_seed(master, label, index)`. Labels are short static strings
//! ("sample", "env-episode", "shuffle", ...) so streams stay independent of
//! each other and of iteration order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x00000100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream label and index into a new 64-bit seed.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let h = fnv1a(label.as_bytes());
    splitmix64(splitmix64(master ^ h).wrapping_add(splitmix64(index ^ h.rotate_left(32))))
}

/// Convenience constructor for a labelled ChaCha8 stream.
pub fn rng(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, index))
}
