//! Seed derivation. Every randomized unit (agent, shuffle, replication) gets
//! its own ChaCha stream so that adding or removing units never perturbs the
//! draws of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A ChaCha8 generator keyed by `seed` and positioned on stream `stream`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// FNV-1a over the bytes of `label`; used to turn string ids into stream ids.
pub fn label_hash(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derives a child seed from a master seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // splitmix64 finaliser over the combined value
    let mut z = seed ^ label_hash(label);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
