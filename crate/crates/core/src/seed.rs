//! Seed derivation.
//!
//! Every random stream in the crate (initialization, shuffling, per-sample
//! attack starts, data sampling) is seeded from one experiment seed through
//! [`derive`], so results do not depend on evaluation order or thread count.

/// Stream tags. Distinct tags give statistically independent generators.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const TRAIN_ATTACK: u64 = 3;
    pub const EVAL_ATTACK: u64 = 4;
    pub const DATA_TRAIN: u64 = 5;
    pub const DATA_TEST: u64 = 6;
    pub const PROBE: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index.
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}
