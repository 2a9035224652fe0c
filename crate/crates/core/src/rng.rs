//! Deterministic RNG stream derivation.
//!
//! Every random decision in a run draws from a stream keyed by the master
//! seed plus a tuple of identifiers (client id, round, purpose). Streams are
//! independent of scheduling, so worker count never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags keep streams for different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Client = 2,
    Environment = 3,
    Attack = 4,
    Server = 5,
    Topology = 6,
    Adaptation = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key tuple into a single 64-bit seed.
pub fn stream_seed(master: u64, purpose: Purpose, keys: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0x5EED_F00D);
    h = splitmix64(h ^ purpose as u64);
    for &k in keys {
        h = splitmix64(h ^ k);
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, keys: &[u64]) -> SimRng {
    SimRng::seed_from_u64(stream_seed(master, purpose, keys))
}
