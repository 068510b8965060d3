//! Per-agent, per-round random streams.
//!
//! Every random decision an agent makes in a round (sampling, noise, coins)
//! comes from a stream keyed by `(seed, stream key, round)`. The stream key
//! is the agent index unless the engine has been given a permutation.
//! Serial and parallel execution therefore draw identical numbers.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type AgentRng = Xoshiro256PlusPlus;

/// Round slot used for draws made while initializing a population.
pub const INIT_ROUND: u64 = u64::MAX;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the three key components into one 64-bit stream seed.
#[inline]
pub fn stream_seed(seed: u64, key: u64, round: u64) -> u64 {
    let a = splitmix64(seed ^ 0x6A09_E667_F3BC_C908);
    let b = splitmix64(a ^ key.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ round.wrapping_mul(0xA076_1D64_78BD_642F))
}

#[inline]
pub fn stream(seed: u64, key: u64, round: u64) -> AgentRng {
    AgentRng::seed_from_u64(stream_seed(seed, key, round))
}
