//! Named, counter-addressed random substreams.
//!
//! Every consumer of randomness derives its generator from a base seed, a
//! [`Stream`] tag and an index, so adding work to one stream never shifts
//! the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EngineRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Paths = 3,
    Imputation = 4,
    Shuffle = 5,
    Series = 6,
    Validation = 7,
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a base seed with a tag into a child seed.
pub fn derive_seed(seed: u64, tag: Stream, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag as u64)) ^ index)
}

/// Generator for substream `index` of `tag` under `seed`.
pub fn substream(seed: u64, tag: Stream, index: u64) -> EngineRng {
    let mut rng = EngineRng::seed_from_u64(mix64(seed ^ mix64(tag as u64)));
    rng.set_stream(index);
    rng
}
