//! Deterministic stream derivation for bootstrap replicates.
//!
//! Every replicate owns a stream derived from `(master_seed, replicate_index)`
//! so replicate b produces identical draws no matter which worker runs it or
//! in what order. The derivation is a SplitMix64 step over the master seed
//! advanced by the golden-ratio increment per index.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate `index` under `master`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Fresh generator for replicate `index` under `master`.
pub fn replicate_rng(master: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(replicate_seed(master, index))
}

/// Generator seeded directly (single-stream uses such as data simulation).
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
