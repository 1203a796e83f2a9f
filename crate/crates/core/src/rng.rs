//! Seeded, splittable random streams.
//!
//! Every unit of Monte-Carlo work (a trial, a bag, a training run) draws from
//! its own ChaCha stream keyed by `(seed, domain, index)`, so results do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type AuditRng = ChaCha12Rng;

/// Domain tags for substreams.
pub mod domain {
    pub const DATA: u64 = 1;
    pub const MECHANISM: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const ADVANTAGE: u64 = 4;
    pub const SCATTER: u64 = 5;
    pub const HPADV: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const SWEEP: u64 = 8;
    pub const BOUNDS: u64 = 9;
    pub const LABELS: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix two words into a derived seed.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Independent generator for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: u64, index: u64) -> AuditRng {
    let mut rng = AuditRng::seed_from_u64(derive(seed, domain));
    rng.set_stream(index);
    rng
}
