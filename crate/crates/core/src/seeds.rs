//! Deterministic seed derivation. Every random stream in a run is a pure
//! function of the base seed and a path of integers.

/// SplitMix64 finalizer applied along `path`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = mix(base ^ 0x9e37_79b9_7f4a_7c15);
    for &p in path {
        state = mix(state ^ mix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    state
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named streams derived from one run seed.
pub mod stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const VAL_DATA: u64 = 2;
    pub const INIT: u64 = 3;
    pub const LANCZOS: u64 = 4;
}
