//! Named deterministic random streams.
//!
//! Every consumer of randomness gets its own stream derived from the
//! root seed and a stable name, so adding or reordering one consumer
//! never shifts the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// ChaCha20 stream seeded by sha256(root_seed ‖ name).
pub fn named_stream(root_seed: u64, name: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}
