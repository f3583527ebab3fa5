//! Per-replication seed derivation.
//!
//! Seeds are the first eight bytes of SHA-256 over the little-endian
//! encoding of `(master, group, replication)`, so every work item owns an
//! independent stream no matter which worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator used by every simulation entry point.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn replication_seed(master: u64, group: u64, replication: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(group.to_le_bytes());
    hasher.update(replication.to_le_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
