//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(master_seed, domain, index)`, so results never depend on scheduling or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream domains. Values are part of the on-disk reproducibility contract.
pub mod domain {
    pub const TOPOLOGY: u64 = 1;
    pub const FADING: u64 = 2;
    pub const RANDOM_BASELINE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const DROPOUT: u64 = 6;
}

pub fn stream(master_seed: u64, domain: u64, index: u64) -> Stream {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&domain.to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
