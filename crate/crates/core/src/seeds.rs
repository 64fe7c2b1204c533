//! Seed derivation. Every random choice in the lab flows from an explicit
//! seed mixed with a purpose tag, so streams never alias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scene seeds at or above this bit are reserved for held-out evaluation.
pub const EVAL_SEED_BIT: u64 = 1 << 63;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one well-mixed seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C909, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

/// A training-range scene seed (high bit clear).
pub fn train_seed(parts: &[u64]) -> u64 {
    mix(parts) & !EVAL_SEED_BIT
}

/// An evaluation-range scene seed (high bit set).
pub fn eval_seed(parts: &[u64]) -> u64 {
    mix(parts) | EVAL_SEED_BIT
}
