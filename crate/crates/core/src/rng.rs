//! Seed derivation. All randomness in the crate descends from one user seed;
//! independent streams (per frame, per camera, per purpose) get their own
//! ChaCha generator keyed by a mixed seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep derived seeds for different purposes apart.
pub mod stream {
    pub const FLIGHT: u64 = 1;
    pub const CAMERAS: u64 = 2;
    pub const DETECTIONS: u64 = 3;
    pub const PERTURB: u64 = 4;
    pub const INIT_NOISE: u64 = 5;
    pub const RANSAC: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)).wrapping_add(index))
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
