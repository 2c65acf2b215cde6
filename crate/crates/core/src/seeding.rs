//! Deterministic seed derivation.
//!
//! Every stochastic stage derives its RNG seed by folding indices into a
//! master seed with splitmix64. Trajectory shots are seeded per shot index,
//! so results do not depend on how shots are batched across worker threads,
//! and the runner folds in the experiment id, sweep-point index and
//! repetition index so no two stages share a stream.

/// splitmix64 output function; a fixed, well-mixed 64-bit permutation.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold one index into a seed.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c909)))
}

/// Fold a label (e.g. an experiment id) into a seed.
pub fn mix_label(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes, then splitmix with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(seed, h)
}
