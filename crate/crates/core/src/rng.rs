//! Seeded random streams. Each `(seed, purpose)` pair selects an independent
//! ChaCha8 stream, so adding draws for one purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    TreeGeometry = 1,
    ImageNoise = 2,
    BranchDeletion = 3,
    Breakage = 4,
    BoundaryNoise = 5,
    Init = 6,
    Shuffle = 7,
    Augment = 8,
    Fixture = 9,
    Dataset = 10,
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    substream(seed, purpose, 0)
}

/// A stream further keyed by `index` (an epoch, a case, a layer).
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}

/// Seed of case `index` in a dataset drawn with `seed`.
pub fn case_seed(seed: u64, index: u64) -> u64 {
    use rand::RngExt;
    substream(seed, Purpose::Dataset, index).random()
}
