//! Seeding discipline for every random draw in the crate.
//!
//! All randomness comes from ChaCha8 (a counter-based generator with a
//! published specification), keyed by a 64-bit seed expanded the way
//! `rand_core::SeedableRng::seed_from_u64` documents (PCG32 expansion) and
//! separated into independent 64-bit stream ids. Stream ids are structured
//! as `(purpose << 48) | index`, so e.g. the shuffle for epoch 3 and the
//! draw of dataset seeds never share a keystream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes occupying the top 16 bits of a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    /// Drawing the distinct seed tuples of a dataset.
    DatasetSeeds = 1,
    /// Per-sample streams within a dataset split; index = (split << 32) | sample.
    Sample = 2,
    /// Parameter initialisation.
    Init = 3,
    /// Batch order; index = epoch.
    Shuffle = 4,
    /// Free-form streams for tests and tools.
    Aux = 5,
}

/// Independent generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << 48));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}
