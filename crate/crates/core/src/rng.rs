//! Named random sub-streams derived from one global seed.
//!
//! Every consumer of randomness (splitting, initialization, batching,
//! negative sampling, probes) draws from its own stream so that changing one
//! component does not shift the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const INIT: &str = "init";
pub const BATCHING: &str = "batching";
pub const NEGATIVES: &str = "negatives";
pub const PROBES: &str = "probes";
pub const SYNTH: &str = "synth";
pub const EVAL: &str = "eval";

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stream `name` of the global `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    indexed_stream(seed, name, 0)
}

/// Stream `name` of `seed`, further split by an index (e.g. the epoch number).
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng
}
