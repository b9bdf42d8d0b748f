//! Named random sub-streams derived from one run seed.
//!
//! Every consumer of randomness asks for `(seed, stream name, index)` and gets
//! an independent ChaCha generator, so resuming at step `n` needs no stored
//! generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DATA: &str = "data";
pub const STREAM_POLICY_INIT: &str = "policy-init";
pub const STREAM_SWEEP: &str = "sweep";
pub const STREAM_EVAL: &str = "eval";
pub const STREAM_BATCH: &str = "batch";

pub fn stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, index))
}

pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the stream name, then splitmix64 finalization.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(splitmix(seed ^ h).wrapping_add(index))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
