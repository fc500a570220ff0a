//! Seed derivation for reproducible, mutually independent random streams.
//!
//! Every stochastic component draws from its own [`ChaCha8Rng`] keyed by
//! `(base seed, replication, arm, purpose)`. Streams never share state, so
//! replications and per-arm reward draws can run concurrently while staying
//! bit-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Keeps reward noise, policy
/// randomization, and cohort sampling independent of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Bernoulli reward draws for one arm.
    Reward,
    /// A policy's internal randomization (e.g. uniform super-arm draws).
    Policy,
    /// Ground-truth cohort parameter sampling.
    Cohort,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Reward => 0x01,
            StreamKind::Policy => 0x02,
            StreamKind::Cohort => 0x03,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for stream `(base, replication, arm, kind)`.
pub fn derive_seed(base: u64, replication: u64, arm: u64, kind: StreamKind) -> u64 {
    let mut s = splitmix64(base ^ kind.tag().wrapping_mul(0xa076_1d64_78bd_642f));
    s = splitmix64(s ^ replication.wrapping_mul(0xe703_7ed1_a0b4_28db));
    splitmix64(s ^ arm.wrapping_mul(0x8ebc_6af0_9c88_c6e3))
}

/// A seeded stream for `(base, replication, arm, kind)`.
pub fn stream(base: u64, replication: u64, arm: u64, kind: StreamKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, replication, arm, kind))
}
