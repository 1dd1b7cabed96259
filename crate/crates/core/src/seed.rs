//! Seed fan-out. Every consumer of randomness derives its own stream from the
//! master seed and a consumer name, so adding a consumer never shifts the
//! streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives the seed of the stream called `name` under `master`.
pub fn derive(master: u64, name: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a(name))
}

/// Derives a seed for the `index`-th member of a family of streams.
pub fn derive_indexed(master: u64, name: &str, index: u64) -> u64 {
    splitmix64(derive(master, name) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(master: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive(master, name))
}

pub fn rng_indexed(master: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(master, name, index))
}
