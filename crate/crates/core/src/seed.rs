//! Seed derivation.
//!
//! `hash64` folds a list of words through the SplitMix64 finalizer
//! (Steele, Lea & Flood 2014). The constants are fixed; changing them changes
//! every derived seed and therefore every experiment CSV.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit hash of `words`.
pub fn hash64(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5053_4543_5444_3030, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Seed of one experiment trial.
pub fn trial_seed(base_seed: u64, batch_size: usize, trial: usize) -> u64 {
    hash64(&[base_seed, batch_size as u64, trial as u64])
}
