//! Named random sub-streams derived from a single root seed.
//!
//! Every stochastic stage (data, split, augment, init, ...) draws from its own
//! ChaCha stream so stages can be replayed independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive the seed of sub-stream `name` (with extra integer coordinates such
/// as fold or repeat indices) from `root`.
pub fn stream_seed(root: u64, name: &str, coords: &[u64]) -> u64 {
    let mut s = splitmix64(root ^ fnv1a(name));
    for &c in coords {
        s = splitmix64(s ^ c.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    s
}

pub fn stream(root: u64, name: &str, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, name, coords))
}
