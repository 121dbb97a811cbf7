//! Seed derivation for reproducible parallel streams.
//!
//! Every random consumer gets its own `ChaCha8Rng`, seeded from a parent seed
//! and a child index through a SplitMix64 finaliser. Child `b` of `seed` is
//! keyed by `seed ^ (b + 1)`, so a replicate's stream never depends on which
//! thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child of `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ index.wrapping_add(1))
}

/// Seed of a named sub-stream, used to separate e.g. initialisation from shuffling.
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    mix64(mix64(seed) ^ stream as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0x1001,
    Shuffle = 0x1002,
    Characteristics = 0x2001,
    Returns = 0x2002,
    Network = 0x2003,
    Bootstrap = 0x2004,
    Multipliers = 0x3001,
}

pub fn rng_from(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
