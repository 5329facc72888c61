//! Deterministic seed splitting for embarrassingly parallel replicates.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by
//! `split_seed(master, index)`. The split is a splitmix64 hash of the pair, so
//! streams are reproducible regardless of scheduling or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit stream seed for `(master_seed, index)`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_mul(0xd6e8_feb8_6659_fd93)))
}

/// ChaCha8 stream for `(master_seed, index)`; the 256-bit key is four
/// successive splitmix64 outputs of the stream seed.
pub fn stream_rng(master: u64, index: u64) -> ChaCha8Rng {
    let s = split_seed(master, index);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(s.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
