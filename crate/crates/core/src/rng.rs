//! Named random substreams derived from one root seed.
//!
//! Every consumer of randomness (data shuffling, point dropout, posterior
//! noise, prior sampling, initialization) draws from its own stream, keyed by
//! a name and an index, so that adding draws in one component never shifts
//! the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: &str = "init";
pub const STREAM_DATA: &str = "data";
pub const STREAM_STEP: &str = "step";
pub const STREAM_PRIOR: &str = "prior";
pub const STREAM_POSTERIOR: &str = "posterior";
pub const STREAM_EVAL: &str = "eval";

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic stream for `(seed, name, index)`.
pub fn substream(seed: u64, name: &str, index: u64) -> Rng {
    let key = splitmix64(splitmix64(seed ^ fnv1a(name)).wrapping_add(index));
    ChaCha8Rng::seed_from_u64(key)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
