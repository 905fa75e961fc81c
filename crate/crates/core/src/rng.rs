//! Seeded counter-based random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Purposes keep streams derived from one master seed independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Corpus = 1,
    CorpusTables = 2,
    Init = 3,
    TrainStep = 4,
    Sampling = 5,
    Extractor = 6,
    Evaluation = 7,
}

/// Independent ChaCha20 stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    rng
}
