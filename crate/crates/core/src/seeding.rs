//! Seed derivation. Every random stream in an experiment is a pure function of
//! the master seed and a small tuple of indices, so results do not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one seed. Order matters.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Stream purposes, kept distinct so training and evaluation never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Training = 1,
    Evaluation = 2,
    OuterSearch = 3,
}

/// Seed of the objective evaluation for candidate `index` of outer iteration
/// `iteration`. Iteration 0, index 0 is the φ₀ baseline.
pub fn candidate_seed(master: u64, iteration: usize, index: usize) -> u64 {
    mix(&[master, iteration as u64, index as u64])
}

pub fn derive(seed: u64, purpose: Purpose) -> u64 {
    mix(&[seed, purpose as u64])
}
