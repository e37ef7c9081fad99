//! Expansion of the master seed into independent per-stage seeds.
//!
//! `stage_seed(master, stage, index) = mix(master ^ mix((stage << 48) ^ index))`
//! where `mix` is the SplitMix64 finaliser. Streams are keyed by stage and a
//! counter within the stage, so a change to one stage (for example the alpha
//! list) never shifts the randomness of another.

pub const PHANTOM: u64 = 1;
pub const TRAIN_NOISE: u64 = 2;
pub const HELDOUT_NOISE: u64 = 3;
pub const INIT: u64 = 4;
pub const PATCHES: u64 = 5;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stage_seed(master: u64, stage: u64, index: u64) -> u64 {
    mix(master ^ mix((stage << 48) ^ index))
}

/// Counter for realization `r` of phantom `k`.
pub fn realization_index(phantom: usize, realization: usize) -> u64 {
    ((phantom as u64) << 24) | realization as u64
}
