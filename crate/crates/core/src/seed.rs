//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from the single master seed via
//! `child_seed(master, tag, a, b)`. The derivation is a fixed, hand-rolled
//! hash (FNV-1a over the tag, splitmix64 finalization) so it never changes
//! across std versions or platforms. Child streams are independent of
//! execution order, which is what makes client updates safe to run on a
//! worker pool of any size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from `(master, tag, a, b)`.
///
/// `tag` names the purpose of the stream ("server", "client-train", ...);
/// `a` and `b` are typically a round index and a client or sample index.
pub fn child_seed(master: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master ^ fnv1a(tag.as_bytes()));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

/// A ChaCha stream seeded by [`child_seed`].
pub fn child_rng(master: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, tag, a, b))
}
