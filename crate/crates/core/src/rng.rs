//! Seeded random streams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by the run
//! seed plus a small tuple of stream ids (phase, epoch, view, ...), so a run
//! is reproducible regardless of the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream from a seed and a list of stream ids.
pub fn stream(seed: u64, ids: &[u64]) -> Rng {
    let mut key = splitmix64(seed);
    for &id in ids {
        key = splitmix64(key ^ splitmix64(id.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    ChaCha8Rng::seed_from_u64(key)
}

/// Stream ids for the distinct consumers of randomness in a run.
pub mod ids {
    pub const INIT: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const FINETUNE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const HARD_NEG_BASELINE: u64 = 5;
    pub const SUPERVISED: u64 = 6;
}
