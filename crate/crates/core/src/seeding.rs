//! Deterministic seed derivation for keyed random streams.
//!
//! Every stochastic component takes an explicit root seed and derives
//! per-unit sub-seeds (per user, per replication, per experiment) so results
//! are reproducible and independent of execution order or thread count.

/// SplitMix64 finalizer; good avalanche, cheap, stable across platforms.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a path of stream indices.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0xa076_1d64_78bd_642f)));
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable() {
        // Frozen values: seeded pipelines depend on these never changing.
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(derive_seed(42, &[1, 2]), derive_seed(42, &[1, 2]));
        assert_ne!(derive_seed(42, &[1, 2]), derive_seed(42, &[2, 1]));
        assert_ne!(derive_seed(42, &[1]), derive_seed(43, &[1]));
    }

    #[test]
    fn paths_do_not_collide_trivially() {
        let a = derive_seed(7, &[0, 0]);
        let b = derive_seed(7, &[0]);
        assert_ne!(a, b);
    }
}
