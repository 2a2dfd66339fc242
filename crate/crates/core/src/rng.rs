//! Named random sub-streams derived from a single 64-bit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derive an independent generator for `stream` from `seed`.
///
/// Each consumer gets its own stream, so adding a new consumer never shifts
/// the draws of an existing one.
pub fn substream(seed: u64, stream: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha20Rng::from_seed(key)
}
