//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the experiment seed, with the
//! 64-bit stream id derived from a list of tags (d, repetition, purpose, ...).
//! ChaCha is counter based, so distinct stream ids give independent sequences
//! regardless of the order in which workers consume them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod purpose {
    pub const MEANS: u64 = 1;
    pub const DATA: u64 = 2;
    pub const METHOD: u64 = 3;
    pub const SPLIT: u64 = 4;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id for a tag list. Order matters.
pub fn stream_id(tags: &[u64]) -> u64 {
    tags.iter().fold(0x5EED_u64, |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(tags));
    rng
}

/// Derive a child seed, used where an API takes a plain integer seed.
pub fn child_seed(seed: u64, tags: &[u64]) -> u64 {
    splitmix(seed ^ stream_id(tags))
}
