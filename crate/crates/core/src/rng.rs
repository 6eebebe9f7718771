//! Seed derivation for deterministic, decoupled random substreams.
//!
//! Every source of randomness in a run is an explicit stream derived from
//! `(master seed, tag path)`. Congestion streams are keyed by seed only, so
//! all policies compared under one seed consume the identical network sample
//! path; training streams additionally carry the policy index so different
//! policies see independent minibatch/quantizer noise. Per-client streams
//! carry `(round, client)` so parallel and serial client execution produce
//! identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DOMAIN_CONGESTION: u64 = 0x01;
pub const DOMAIN_TRAINING: u64 = 0x02;
pub const DOMAIN_INIT: u64 = 0x03;
pub const DOMAIN_DATA: u64 = 0x04;
pub const DOMAIN_CALIBRATION: u64 = 0x05;
pub const DOMAIN_PROBE: u64 = 0x06;
pub const DOMAIN_ORACLE: u64 = 0x07;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from a master seed and a tag path.
///
/// Tag absorption is order-sensitive, so `[a, b]` and `[b, a]` yield
/// unrelated streams.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    for &tag in tags {
        let mixed = splitmix64(&mut state);
        state ^= tag.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ mixed;
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One standard normal draw.
#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
