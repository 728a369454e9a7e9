//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed on the run
//! seed plus a tag and up to two coordinates, so results never depend on
//! evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PLACEMENT: u64 = 0x706c_6163;
pub const TRAFFIC: u64 = 0x7472_6166;
pub const ORDERING: u64 = 0x6f72_6472;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for part in [tag, a, b] {
        h = mix(h.wrapping_add(part).wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(h)
}
