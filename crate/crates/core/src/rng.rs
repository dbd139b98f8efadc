//! Seeded random streams and order-independent replicate seeding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream owned by one simulated path.
pub type RandomStream = ChaCha8Rng;

/// Creates a stream from a 64-bit seed.
pub fn stream(seed: u64) -> RandomStream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a seed from a master seed and an ordered list of words.
///
/// Each word is folded in with a full splitmix round, so the result depends
/// on the values and their positions but not on any execution order.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(master), |acc, &w| splitmix64(acc ^ w))
}

/// Seed for replicate `replicate` of the cell `(n, a)` in an experiment of
/// kind `tag`.
pub fn replicate_seed(master: u64, tag: u64, n: usize, a: f64, replicate: usize) -> u64 {
    derive_seed(master, &[tag, n as u64, a.to_bits(), replicate as u64])
}
