//! Reproducible random streams.
//!
//! Every lift draws from its own ChaCha8 stream. The 256-bit key comes from
//! the run seed and the 64-bit stream id from `(image_id, keypoint_id)`:
//!
//! ```text
//! key    = ChaCha8Rng::seed_from_u64(seed)
//! stream = splitmix64(splitmix64(image_id) ^ keypoint_id)
//! ```
//!
//! ChaCha is counter based, so a stream's output depends only on these three
//! values and never on which thread or in which order descriptors are lifted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(image_id: u64, keypoint_id: u64) -> u64 {
    splitmix64(splitmix64(image_id) ^ keypoint_id)
}

pub fn stream(seed: u64, image_id: u64, keypoint_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(image_id, keypoint_id));
    rng
}

/// A plain generator for whole-run decisions (partitions, corpora, restarts).
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed, e.g. one per benchmark repetition.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}
