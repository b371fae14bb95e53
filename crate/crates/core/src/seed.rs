//! Counter-based seed derivation.
//!
//! Every random draw in the pipeline is keyed by a path of counters below the
//! master seed, e.g. `(master, TASK_STREAM, task_index)` then
//! `(task_seed, update, rollout)`. A seed therefore never depends on which
//! thread ran first.

/// Stream tags used by the pipeline. Stable across versions; changing one
/// changes every experiment output.
pub mod stream {
    pub const TRAIN_TASKS: u64 = 1;
    pub const EVAL_TASKS: u64 = 2;
    pub const TRAIN_LEARN: u64 = 3;
    pub const REFERENCE_LEARN: u64 = 4;
    pub const FINE_TUNE: u64 = 5;
    pub const ROLLOUT: u64 = 6;
    pub const RESTART_LEARN: u64 = 7;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and two counters.
pub fn derive_seed(parent: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(parent) ^ a) ^ b.rotate_left(32))
}
