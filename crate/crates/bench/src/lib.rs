//! Seeded input generators shared by the benches.

use kcomplex_core::{ActivityMatrix, AdvantageMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Edit counts with roughly `density` of cells set, every row and column non-empty.
pub fn activity(languages: usize, articles: usize, density: f64, seed: u64) -> ActivityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<u64>> = (0..languages)
        .map(|_| {
            (0..articles)
                .map(|_| if rng.random::<f64>() < density { rng.random_range(1..500) } else { 0 })
                .collect()
        })
        .collect();
    for (i, row) in rows.iter_mut().enumerate() {
        row[i % articles] += 1;
    }
    for j in 0..articles {
        rows[j % languages][j] += 1;
    }
    ActivityMatrix::from_dense(&rows).expect("non-empty matrix")
}

/// Pruned advantage matrix from a random activity matrix.
pub fn advantage(languages: usize, articles: usize, density: f64, seed: u64) -> AdvantageMatrix {
    let rca = kcomplex_core::rca::compute_rca(&activity(languages, articles, density, seed)).expect("rca");
    kcomplex_core::rca::binarize(&rca, 1.0).expect("some advantage")
}

/// Scores and labels for AUC timing.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels = scores.iter().map(|&s| rng.random::<f64>() < s).collect();
    (scores, labels)
}
