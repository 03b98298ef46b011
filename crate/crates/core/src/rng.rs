//! Per-cell seed derivation.
//!
//! Every sampled trajectory gets its own seed, derived from the master seed and
//! the indices naming it, so results do not depend on execution order.

/// SplitMix64 output function.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `master`, one SplitMix64 round per part.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(master), |acc, &p| {
        mix(acc.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(mix(p)))
    })
}

/// Seed of the trajectory `(env, θ*, start, rollout)`.
pub fn trajectory_seed(master: u64, env: u64, theta: usize, start: usize, rollout: usize) -> u64 {
    derive_seed(master, &[env, theta as u64, start as u64, rollout as u64])
}
