//! Seed derivation.
//!
//! Every random stream is `ChaCha8Rng` seeded with
//! `splitmix64(root ^ fnv1a64(tag))`, optionally mixed again with an index,
//! so each subsystem owns an independent, reproducible stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a64(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, tag: &str) -> u64 {
    splitmix64(root ^ fnv1a64(tag))
}

pub fn derive_indexed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, tag) ^ index)
}

pub fn rng_for(root: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(root, tag))
}

pub fn rng_indexed(root: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(root, tag, index))
}

pub fn normal(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    rng.sample(rand_distr::StandardNormal)
}
