//! Seeded inputs shared by the benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quiet_core::stats::ReliabilityMatrix;
use quiet_core::EmbeddingVector;

/// Integer ratings 0..=5 for `items` x `raters`, with about one cell in ten missing.
pub fn ratings(items: usize, raters: usize, seed: u64) -> ReliabilityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for i in 0..items {
        for r in 0..raters {
            if rng.random_range(0..10) > 0 {
                triples.push((format!("i{i}"), format!("r{r}"), f64::from(rng.random_range(0..=5u8))));
            }
        }
    }
    ReliabilityMatrix::from_triples(triples)
}

/// Model totals per configuration, loosely correlated across configurations.
pub fn totals(configs: usize, models: usize, seed: u64) -> Vec<(String, BTreeMap<String, f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..models).map(|_| rng.random_range(5.0..10.0)).collect();
    (0..configs)
        .map(|c| {
            let t = base
                .iter()
                .enumerate()
                .map(|(m, b)| (format!("model{m:02}"), b + rng.random_range(-0.5..0.5)))
                .collect();
            (format!("config{c:02}"), t)
        })
        .collect()
}

pub fn vectors(n: usize, dim: usize, seed: u64) -> BTreeMap<String, EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|m| {
            let v = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (format!("model{m:02}"), EmbeddingVector::new(v).unwrap())
        })
        .collect()
}
