//! Named, derived random streams.
//!
//! Every random decision flows from one master seed. Each consumer asks for a
//! stream by tag and index, so trial `i` of the arrival process sees the same
//! draws regardless of how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags. The numeric values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    Policy = 2,
    Bootstrap = 3,
    Estimation = 4,
    Generator = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `tag` number `index` under `master`.
pub fn derive_seed(master: u64, tag: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(tag as u64)) ^ index)
}

pub fn stream(master: u64, tag: Stream, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, tag, index))
}

pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
