//! Workloads shared by the benchmarks under `benches/`.

use pkge_core::data::make_synthetic_translation_kg;
use pkge_core::{Dataset, TrainConfig};

/// Synthetic translation KG with `entities * relations` candidate triples
/// before the 80/10/10 split.
pub fn workload(entities: usize, relations: usize) -> Dataset {
    make_synthetic_translation_kg(entities, relations, 8, entities, 42).expect("valid sizes")
}

pub fn config(dim: usize, epochs: usize) -> TrainConfig {
    TrainConfig { dim, max_epochs: epochs, convergence_eps: 0.0, ..TrainConfig::default() }
}
