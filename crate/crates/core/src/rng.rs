//! Deterministic random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream keyed by the
//! experiment seed plus a (domain, a, b) triple, so results never depend on the
//! order in which clients are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Data = 1,
    MaskPlan = 2,
    ModelInit = 3,
    Augment = 4,
    Shuffle = 5,
    Fixture = 6,
}

/// A fresh generator for `(seed, domain, a, b)`. `a` and `b` are usually a
/// client id and a round index; each is limited to 28 bits.
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((domain as u64) << 56) | ((a & 0x0fff_ffff) << 28) | (b & 0x0fff_ffff);
    rng.set_stream(id);
    rng
}
