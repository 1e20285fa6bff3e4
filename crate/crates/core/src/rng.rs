//! Seed plumbing.
//!
//! Every source of randomness in the toolkit is derived from one master seed
//! through a named sub-seed split, so each component (data synthesis, weight
//! init, epoch shuffling, trial sampling, pair construction) is independently
//! reproducible. The split is a SplitMix64 hash of the master seed and the
//! domain string; it is stable across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic RNG used everywhere in the toolkit.
pub type Rng = ChaCha12Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the sub-seed for a named randomness domain from the master seed.
///
/// Domains in use: `"data"`, `"init"`, `"shuffle"`, `"trials"`, `"pairs"`.
pub fn sub_seed(master: u64, domain: &str) -> u64 {
    let mut h = splitmix64(master);
    for &b in domain.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// ChaCha stream seeded from a named domain of the master seed.
pub fn domain_rng(master: u64, domain: &str) -> Rng {
    Rng::seed_from_u64(sub_seed(master, domain))
}
