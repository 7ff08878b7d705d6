//! Seed-domain separation. Every random stream in the crate is derived
//! from a base seed, a stream tag and an index, so that streams never
//! overlap and any one of them can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Trajectory = 1,
    TrainNoise = 2,
    TrainSnr = 3,
    Shuffle = 4,
    TrainEpsilon = 5,
    EvalNoise = 6,
    EvalEpsilon = 7,
    TestNoise = 8,
    Init = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream as u64) ^ index)
}

pub fn stream_rng(base: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}
