//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha20 (`rand_chacha`), seeded
//! from a 64-bit master seed. Independent consumers get independent ChaCha
//! stream ids so results never depend on call order or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; derives child seeds from a master seed.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
