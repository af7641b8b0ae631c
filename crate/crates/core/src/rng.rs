//! Seed splitting for independent replicates.
//!
//! Replicate `k` of a run seeded with `root` draws from a ChaCha8 generator
//! keyed by `root` on stream `k`. Streams never overlap, so replicates can
//! run in any order (or concurrently) and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn root(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn replicate(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives an independent root seed for a named sub-task, so that e.g. the
/// data-generation and bootstrap stages of one run do not share a stream.
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
