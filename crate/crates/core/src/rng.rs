//! Seeded random streams. Every consumer derives its own ChaCha stream from
//! `(seed, stream)` so that independent parts of a run never share state.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Well-known stream ids.
pub mod streams {
    pub const SAMPLER: u64 = 1;
    pub const REFERENCE: u64 = 2;
    pub const TEMPLATES: u64 = 3;
    pub const TRAINING: u64 = 4;
    pub const INIT: u64 = 5;
    pub const HOLDOUT: u64 = 6;
    pub const DATASET: u64 = 7;
    pub const SELECTION: u64 = 8;
    /// Per-experiment streams start here and count upward.
    pub const EXPERIMENT_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a sub-index into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || gaussian(rng))
}
