//! Fixtures shared by the benchmarks.

use kdey_core::protocol::kraemer_sample;
use kdey_core::Posteriors;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `rows` uniform points of the simplex with `n` vertices.
pub fn random_posteriors(rows: usize, n: usize, seed: u64) -> Posteriors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<Vec<f64>> = (0..rows).map(|_| kraemer_sample(n, &mut rng).into_vec()).collect();
    Posteriors::from_rows(&data).expect("simplex rows")
}

/// Labels `0, 1, .., n-1, 0, 1, ..` for `rows` rows.
pub fn round_robin_labels(rows: usize, n: usize) -> Vec<usize> {
    (0..rows).map(|i| i % n).collect()
}
