//! Shared fixtures for the criterion benchmarks in `benches/`.

use attnrec::attncf::AttentionParams;
use attnrec::embed::EmbeddingTable;
use attnrec::rng;
use rand::Rng;

/// Random embedding table with unit-scale entries.
pub fn random_table(n_items: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut r = rng::seeded(seed);
    let ids: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
    let flat: Vec<f64> = (0..n_items * dim)
        .map(|_| r.random::<f64>() * 2.0 - 1.0)
        .collect();
    EmbeddingTable::from_vectors(dim, ids, flat).expect("shape is consistent")
}

/// Initialized attention parameters with biases jittered off zero.
pub fn random_params(dim: usize, hidden: usize, depth: usize, seed: u64) -> AttentionParams {
    let mut params = AttentionParams::init(dim, hidden, depth, seed);
    let mut r = rng::seeded(rng::derive(seed, 1));
    for v in params.flat_mut().iter_mut() {
        *v += 0.1 * (r.random::<f64>() - 0.5);
    }
    params
}
