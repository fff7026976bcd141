//! Deterministic per-consumer random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed, a consumer tag and two integer keys into a stream seed.
pub fn derive(seed: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = splitmix(seed);
    for byte in tag.bytes() {
        h = splitmix(h ^ u64::from(byte));
    }
    h = splitmix(h ^ a);
    splitmix(h ^ b.rotate_left(32))
}

pub fn stream(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, a, b))
}
