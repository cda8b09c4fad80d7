//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synnet::mc::SpanDistribution;

/// Normalized random start and end distributions over `n` positions.
pub fn random_distribution(n: usize, seed: u64) -> SpanDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let z: f64 = v.iter().sum();
        v.into_iter().map(|x| x / z).collect::<Vec<_>>()
    };
    let start = draw();
    let end = draw();
    SpanDistribution::new(start, end).expect("non-empty, equal lengths")
}

/// Random token ids in `[0, vocab)`.
pub fn random_ids(n: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..vocab)).collect()
}
