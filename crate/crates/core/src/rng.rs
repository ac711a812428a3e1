//! Seeded randomness.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`),
//! seeded through `SeedableRng::seed_from_u64` (PCG32 key expansion). Independent
//! sub-streams of one 64-bit seed are selected with ChaCha's 64-bit stream id;
//! the stream ids used by the crate are the constants in [`stream`]. Child seeds
//! (for example one per work unit in a batch) come from [`derive_seed`], a
//! SplitMix64 finalizer over `seed ^ tag`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids. Corpus streams are disjoint from training streams.
pub mod stream {
    pub const TRAIN: u64 = 1;
    pub const VAL: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const EVAL_PATHOLOGICAL: u64 = 4;
    pub const AUTOMATON: u64 = 8;
    pub const INIT: u64 = 16;
    pub const SPLIT: u64 = 17;
    pub const KMEANS: u64 = 18;
    pub const FOREST: u64 = 19;
    /// Per-epoch shuffles use `SHUFFLE_BASE + epoch`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = (seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
