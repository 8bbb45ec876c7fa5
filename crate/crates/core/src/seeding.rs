//! Deterministic seed derivation for nested generators.
//!
//! Replications, per-member fits and per-round optimizer calls each own a
//! generator seeded from the master seed through this mix, so they stay
//! reproducible regardless of execution order.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a path of stream labels.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = mix(base);
    for &p in path {
        state = mix(state ^ p.wrapping_mul(0xd1342543de82ef95).wrapping_add(1));
    }
    state
}
