//! Deterministic seed derivation for stochastic components.
//!
//! A run has one global seed. Each component (`"noise"`, `"ga"`,
//! `"disturb"`, ...) draws from its own stream seeded with
//! `splitmix64(global ^ fnv1a64(name))`, so adding a component never shifts
//! the random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn component_seed(global: u64, component: &str) -> u64 {
    splitmix64(global ^ fnv1a64(component.as_bytes()))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
