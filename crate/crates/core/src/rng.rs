//! Seed splitting.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] obtained via
//! [`substream`]. A substream is identified by the run's 64-bit master seed,
//! a domain tag naming the consumer (`"blockage"`, `"users"`, ...) and an
//! index (trial number, sample number, worker chunk). The three are mixed as
//!
//! ```text
//! key  = splitmix64(master ^ fnv1a64(tag))
//! seed = splitmix64(key ^ splitmix64(index))
//! ```
//!
//! so that independent loops never share a stream and parallel evaluation
//! order never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed value of the substream `(master, tag, index)`.
pub fn substream_seed(master: u64, tag: &str, index: u64) -> u64 {
    let key = splitmix64(master ^ fnv1a64(tag.as_bytes()));
    splitmix64(key ^ splitmix64(index))
}

/// Generator for the substream `(master, tag, index)`.
pub fn substream(master: u64, tag: &str, index: u64) -> SimRng {
    SimRng::seed_from_u64(substream_seed(master, tag, index))
}
