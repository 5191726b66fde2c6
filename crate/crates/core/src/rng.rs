//! Deterministic seeding.
//!
//! Every random decision in the crate flows from one master seed through
//! [`stable_hash`], a fixed splitmix64-based mix over a tag string and
//! integer context (patient index, fold index, ...). The mix is defined
//! here, byte for byte, so seeds never depend on compiler, platform, or
//! std hasher internals. Streams derived for different purposes are
//! independent; streams derived for the same purpose are identical across
//! runs and across parallelism degrees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed, a purpose tag, and integer context into one u64.
pub fn stable_hash(master: u64, tag: &str, context: &[u64]) -> u64 {
    let mut state = master ^ 0x51_7c_c1_b7_27_22_0a_95;
    let mut acc = splitmix64(&mut state);
    for &b in tag.as_bytes() {
        state ^= u64::from(b);
        acc ^= splitmix64(&mut state);
    }
    for &c in context {
        state ^= c;
        acc ^= splitmix64(&mut state);
    }
    acc ^ splitmix64(&mut state)
}

/// A ChaCha stream keyed by `(master, tag, context)`.
pub fn stream(master: u64, tag: &str, context: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash(master, tag, context))
}
