//! Seed derivation. All randomness in a run flows from one 64-bit seed;
//! sub-streams are derived from it by string tags and indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tags naming the documented sub-streams.
pub mod tags {
    pub const TEXT: &str = "text";
    pub const VISUAL: &str = "visual";
    pub const STRATEGY: &str = "strategy";
    pub const RANDOM_WORDS: &str = "random-words";
    pub const RANDOM_BOXES: &str = "random-boxes";
    pub const BASELINE: &str = "baseline";
    pub const FIXTURE: &str = "fixture";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent seed from `seed` and a tag.
pub fn derive(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(tag.as_bytes())))
}

/// Derives an independent seed from `seed` and an index.
pub fn derive_index(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Generator for sub-stream `stream` of `seed`. Streams of the same seed do
/// not overlap, so rows generated in any order or in parallel agree.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
