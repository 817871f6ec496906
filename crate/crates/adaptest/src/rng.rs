//! Seed streams.
//!
//! Every logical stream is a ChaCha generator keyed by a 64-bit seed and a
//! stream id, so a replicate's draws never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for replicate `index` under `master`.
pub fn stream(master: u64, index: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(master);
    r.set_stream(index);
    r
}

/// Mix a seed with a tag; used to split one replicate seed into sub-streams.
pub fn derive(seed: u64, tag: u64) -> u64 {
    // splitmix64 finaliser over the combined word
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniformly random subset of `0..n` with `k` elements, returned sorted.
pub fn sample_subset(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}
