//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed derived from the run seed and a stream label, so
//! results never depend on call order between subsystems.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 finalizer.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed for a named stream.
pub fn derive(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(mix(seed, 0x6c61_6265_6c00), |acc, b| mix(acc, b as u64))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows × cols` matrix of i.i.d. standard normal draws, filled row-major.
pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut r))
}

/// Whether the deterministic execution mode was requested via `GLANN_DETERMINISTIC`.
pub fn deterministic_mode() -> bool {
    std::env::var("GLANN_DETERMINISTIC")
        .map(|v| matches!(v.trim(), "1" | "true" | "yes" | "on"))
        .unwrap_or(false)
}

/// Restrict the global thread pool to one worker when deterministic mode is on.
/// Must run before any parallel work; later calls are no-ops.
pub fn init_execution_mode() {
    if deterministic_mode() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
}
