//! Named random substreams derived from a single master seed.
//!
//! Every stochastic part of an episode draws from its own stream so that,
//! for example, adding a harvest draw never shifts the matching order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Stable (across platforms and toolchains) seed for the stream `name`.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a64(name.as_bytes())))
}

pub fn substream(master: u64, name: &str) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, name))
}

/// The per-episode streams.
#[derive(Clone, Debug)]
pub struct EpisodeRngs {
    pub map: Stream,
    pub harvest: Stream,
    pub matching: Stream,
    pub conflicts: Stream,
}

impl EpisodeRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            map: substream(seed, "map"),
            harvest: substream(seed, "harvest"),
            matching: substream(seed, "matching"),
            conflicts: substream(seed, "conflicts"),
        }
    }
}
