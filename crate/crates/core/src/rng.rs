//! Seed derivation. Every random draw in the simulator comes from a
//! ChaCha stream keyed by a base seed plus a purpose tag and counters, so
//! results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep independent streams apart even when counters collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Partition = 2,
    Init = 3,
    Train = 4,
    Noise = 5,
    Encrypt = 6,
    Keygen = 7,
    Dropout = 8,
    Latency = 9,
    Attack = 10,
    Gradient = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and two counters (typically round
/// and client index).
pub fn derive_seed(base: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(base ^ 0x5eed_5eed);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(base: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    rng_from(derive_seed(base, stream, a, b))
}
