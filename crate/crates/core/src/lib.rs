//! Multi-core TransE knowledge-graph embedding.
//!
//! Entities and relations live in one d-dimensional space where a fact
//! `(head, relation, tail)` should satisfy `head + relation ≈ tail`. The crate
//! provides:
//!
//! * [`data`]: triple files, vocabularies, balanced partitions and a synthetic
//!   translation-KG generator,
//! * [`embedding`]: the embedding table and its text checkpoint format,
//! * [`model`]: energy, hinge loss, negative sampling and subgradients,
//! * [`train`]: the single-thread SGD baseline,
//! * [`mapreduce`]: the map/reduce trainers (SGD with embedding merges, BGD with
//!   gradient-sum reduce),
//! * [`eval`]: entity inference, relation prediction and triplet classification.

pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod mapreduce;
pub mod model;
pub mod seed;
pub mod train;

pub use data::{Dataset, Partition, Triple, Vocabulary};
pub use embedding::{EmbeddingTable, ModelCheckpoint};
pub use error::{Error, ErrorKind, Result};
pub use eval::{ClassifierThresholds, RankingMetrics, Setting};
pub use mapreduce::{MergeStrategy, SyncMode, SyncSchedule};
pub use model::{Key, NormKind};
pub use train::{EpochReport, TrainConfig};
