//! Fixtures shared by the criterion benches.

use turbest::dataset::mix;

/// Deterministic point in `[0, 1)` from a seed and index.
pub fn unit(seed: u64, i: u64) -> f64 {
    (mix(seed, i) >> 11) as f64 / (1u64 << 53) as f64
}
