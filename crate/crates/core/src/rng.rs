//! Seed derivation.
//!
//! Every Monte Carlo draw in the crate is a pure function of a `u64` seed.
//! Sub-seeds are derived from a master seed by a counter-based split:
//!
//! ```text
//! derive_seed(master, stream, index) = mix(mix(master ^ mix(stream + φ)) + index)
//! ```
//!
//! where `mix` is the SplitMix64 finaliser and `φ = 0x9E3779B97F4A7C15`. The
//! `stream` tags what a seed is used for (driver noise, idiosyncratic noise,
//! initial conditions, ...) and `index` counts samples, so any `(stream,
//! index)` cell of a `K × M` Monte Carlo grid can be regenerated on its own
//! regardless of which thread evaluates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SampleRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(stream.wrapping_add(GOLDEN))).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags used across the crate.
pub mod stream {
    pub const DRIVER: u64 = 1;
    pub const BROWNIAN: u64 = 2;
    pub const BROWNIAN_ALT: u64 = 3;
    pub const INITIAL: u64 = 4;
    pub const PARTICLE_NOISE: u64 = 5;
    pub const PARTICLE_INITIAL: u64 = 6;
    pub const OBSERVATION: u64 = 7;
    pub const PROJECTION: u64 = 8;
    pub const TOWER: u64 = 9;
    pub const LADDER: u64 = 10;
}
