//! Seed derivation helpers.
//!
//! All stochastic code in this crate draws from [`ChaCha8Rng`] streams whose
//! seeds are derived deterministically from a caller-supplied base seed, so
//! independent components (init, shuffling, bootstrap draws, environment
//! noise) never share or race a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; full-period mixing of a 64-bit state.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `base` and a stream label.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut state = base;
    let a = splitmix64(&mut state);
    let mut state2 = a ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93);
    splitmix64(&mut state2)
}

/// Three-way derivation, used for (seed, round, arm)-keyed reward streams.
pub fn derive_seed3(base: u64, a: u64, b: u64) -> u64 {
    derive_seed(derive_seed(base, a), b)
}

/// A reproducible RNG for the given seed (stable across platforms).
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_streams() {
        let s0 = derive_seed(42, 0);
        let s1 = derive_seed(42, 1);
        let s2 = derive_seed(43, 0);
        assert_ne!(s0, s1);
        assert_ne!(s0, s2);
    }

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(derive_seed(7, 9), derive_seed(7, 9));
        assert_eq!(derive_seed3(7, 9, 11), derive_seed3(7, 9, 11));
    }
}
