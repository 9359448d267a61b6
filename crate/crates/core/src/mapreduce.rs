//! Multi-core training with a map/reduce master.
//!
//! Each sync round the master normalizes entity vectors, re-partitions the
//! training set, and hands every worker a read-only view of the global table
//! plus its own partition and seed. Workers run on scoped threads and return
//! their outputs by value; the master reduces them once all have finished.
//!
//! * SGD mode: a worker trains a private copy of the table on its partition.
//!   Rows touched by several workers disagree and are merged by a
//!   [`MergeStrategy`].
//! * BGD mode: a worker only accumulates gradients. The reduce sums them in
//!   ascending worker order and takes one mean-gradient step, so the result
//!   does not depend on the worker count beyond float re-association.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{partition, Dataset, Partition};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{corrupt_unchecked, Key, TermGradients};
use crate::seed::{self, Rng};
use crate::train::{
    check_trainable, relative_change, sgd_pass, shuffle_seed, EpochReport,
    TrainConfig, UpdateCounts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    Random,
    #[default]
    Average,
    MiniLoss,
}

impl MergeStrategy {
    pub const ALL: [MergeStrategy; 3] = [Self::Random, Self::Average, Self::MiniLoss];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Average => "average",
            Self::MiniLoss => "miniloss",
        }
    }
}

impl fmt::Display for MergeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown merge strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    Sgd,
    Bgd,
}

impl SyncMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Bgd => "bgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSchedule {
    pub mode: SyncMode,
    pub workers: usize,
    /// Local epochs per round in SGD mode. BGD always takes one full-batch
    /// step per round.
    pub epochs_per_sync: usize,
    /// Weight the Average merge by per-worker update counts.
    #[serde(default)]
    pub weighted_average: bool,
}

impl SyncSchedule {
    pub fn sgd(workers: usize) -> Self {
        Self {
            mode: SyncMode::Sgd,
            workers,
            epochs_per_sync: 1,
            weighted_average: false,
        }
    }

    pub fn bgd(workers: usize) -> Self {
        Self {
            mode: SyncMode::Bgd,
            ..Self::sgd(workers)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::arg("workers must be at least 1"));
        }
        if self.epochs_per_sync == 0 {
            return Err(Error::arg("epochs_per_sync must be at least 1"));
        }
        Ok(())
    }
}

/// What an SGD map worker emits: its private table after local training,
/// which rows it touched, and its local loss.
#[derive(Debug, Clone)]
pub struct MapOutputSgd {
    pub worker_id: usize,
    pub table: EmbeddingTable,
    pub counts: UpdateCounts,
    pub loss: f64,
    pub active: usize,
    pub n_triples: usize,
}

impl MapOutputSgd {
    /// Local loss per partition triple; the MiniLoss ranking key.
    pub fn normalized_loss(&self) -> f64 {
        self.loss / self.n_triples.max(1) as f64
    }
}

/// Per-row gradient sums and term counts. Stored densely; a row is present
/// once its count is non-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    dim: usize,
    entity_sums: Vec<f64>,
    relation_sums: Vec<f64>,
    counts: UpdateCounts,
}

impl GradientAccumulator {
    pub fn new(n_entities: usize, n_relations: usize, dim: usize) -> Self {
        Self {
            dim,
            entity_sums: vec![0.0; n_entities * dim],
            relation_sums: vec![0.0; n_relations * dim],
            counts: UpdateCounts::new(n_entities, n_relations),
        }
    }

    pub fn for_table(table: &EmbeddingTable) -> Self {
        Self::new(table.n_entities(), table.n_relations(), table.dim())
    }

    fn slot_mut(&mut self, key: Key) -> (&mut [f64], &mut u32) {
        let d = self.dim;
        match key {
            Key::Entity(i) => (&mut self.entity_sums[i * d..(i + 1) * d], &mut self.counts.entities[i]),
            Key::Relation(i) => (
                &mut self.relation_sums[i * d..(i + 1) * d],
                &mut self.counts.relations[i],
            ),
        }
    }

    pub fn add_term(&mut self, grads: &TermGradients) {
        for (key, g) in grads.iter() {
            let (sum, count) = self.slot_mut(key);
            for (s, v) in sum.iter_mut().zip(g) {
                *s += v;
            }
            *count += 1;
        }
    }

    /// Adds another accumulator of the same shape into this one.
    pub fn absorb(&mut self, other: &Self) {
        for (a, b) in self.entity_sums.iter_mut().zip(&other.entity_sums) {
            *a += b;
        }
        for (a, b) in self.relation_sums.iter_mut().zip(&other.relation_sums) {
            *a += b;
        }
        for (a, b) in self.counts.entities.iter_mut().zip(&other.counts.entities) {
            *a += b;
        }
        for (a, b) in self.counts.relations.iter_mut().zip(&other.counts.relations) {
            *a += b;
        }
    }

    pub fn get(&self, key: Key) -> Option<(&[f64], u32)> {
        let d = self.dim;
        let count = self.counts.get(key);
        if count == 0 {
            return None;
        }
        let sum = match key {
            Key::Entity(i) => &self.entity_sums[i * d..(i + 1) * d],
            Key::Relation(i) => &self.relation_sums[i * d..(i + 1) * d],
        };
        Some((sum, count))
    }

    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        let e = (0..self.counts.entities.len()).map(Key::Entity);
        let r = (0..self.counts.relations.len()).map(Key::Relation);
        e.chain(r).filter(|&k| self.counts.get(k) > 0)
    }

    pub fn is_empty(&self) -> bool {
        self.keys().next().is_none()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.counts != other.counts {
            return f64::INFINITY;
        }
        self.entity_sums
            .iter()
            .zip(&other.entity_sums)
            .chain(self.relation_sums.iter().zip(&other.relation_sums))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct MapOutputBgd {
    pub worker_id: usize,
    pub grads: GradientAccumulator,
    pub loss: f64,
    pub active: usize,
    pub n_triples: usize,
}

fn check_partition(partition: &Partition) -> Result<()> {
    if partition.is_empty() {
        return Err(Error::arg(format!("partition {} is empty", partition.worker_id)));
    }
    Ok(())
}

/// SGD map: trains a private copy of `snapshot` for `local_epochs` passes
/// over the partition. Corruptions range over every entity of the table.
///
/// The first local epoch walks the partition in its given order with
/// corruptions drawn from `seed::rng(worker_seed)`; later local epochs
/// re-normalize entities and reshuffle first.
pub fn run_map_sgd(
    partition: &Partition,
    snapshot: &EmbeddingTable,
    config: &TrainConfig,
    local_epochs: usize,
    worker_seed: u64,
) -> Result<MapOutputSgd> {
    check_partition(partition)?;
    let mut table = snapshot.clone();
    let mut counts = UpdateCounts::new(table.n_entities(), table.n_relations());
    let mut rng = seed::rng(worker_seed);
    let mut order: Vec<usize> = (0..partition.len()).collect();
    let mut loss = 0.0;
    let mut active = 0;
    for local in 0..local_epochs {
        if local > 0 {
            table.normalize_entities()?;
            order = crate::data::shuffled_indices(
                partition.len(),
                seed::derive(worker_seed, &[seed::TAG_SHUFFLE, local as u64]),
            );
        }
        let totals = sgd_pass(
            &mut table,
            order.iter().map(|&i| &partition.triples[i]),
            config,
            &mut rng,
            Some(&mut counts),
        );
        loss += totals.loss;
        active += totals.active;
    }
    Ok(MapOutputSgd {
        worker_id: partition.worker_id,
        table,
        counts,
        loss,
        active,
        n_triples: partition.len(),
    })
}

/// The random stream for one training triple in one BGD round. Keyed on the
/// triple's position in the training split, so it does not depend on which
/// worker processes the triple.
pub fn triple_rng(round_seed: u64, train_index: usize) -> Rng {
    seed::derived_rng(round_seed, &[seed::TAG_TRIPLE, train_index as u64])
}

/// BGD map: accumulates term gradients over the partition without touching
/// any table.
pub fn run_map_bgd(
    partition: &Partition,
    snapshot: &EmbeddingTable,
    config: &TrainConfig,
    round_seed: u64,
) -> Result<MapOutputBgd> {
    check_partition(partition)?;
    let n_entities = snapshot.n_entities();
    let mut acc = GradientAccumulator::for_table(snapshot);
    let mut grads = TermGradients::new(snapshot.dim());
    let mut loss = 0.0;
    let mut active = 0;
    for (&index, pos) in partition.indices.iter().zip(&partition.triples) {
        let mut rng = triple_rng(round_seed, index);
        for _ in 0..config.neg_per_pos {
            let neg = corrupt_unchecked(pos, n_entities, &mut rng);
            let term = grads.compute(snapshot, pos, &neg, config.margin, config.norm);
            if term > 0.0 {
                acc.add_term(&grads);
                loss += term;
                active += 1;
            }
        }
    }
    Ok(MapOutputBgd {
        worker_id: partition.worker_id,
        grads: acc,
        loss,
        active,
        n_triples: partition.len(),
    })
}

/// Where a merged row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeSource {
    CarryOver,
    Picked { worker_id: usize },
    Averaged { workers: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeTrace {
    pub entities: Vec<MergeSource>,
    pub relations: Vec<MergeSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AverageWeighting {
    #[default]
    Unweighted,
    ByUpdateCount,
}

/// SGD reduce. For each row, the contributing workers are those whose update
/// count for it is non-zero; with none the previous global row is kept,
/// otherwise `strategy` merges the contributors' rows.
pub fn reduce_sgd(
    outputs: &[MapOutputSgd],
    prev_global: &EmbeddingTable,
    strategy: MergeStrategy,
    rng: &mut Rng,
) -> Result<EmbeddingTable> {
    reduce_sgd_traced(outputs, prev_global, strategy, AverageWeighting::Unweighted, rng).map(|(t, _)| t)
}

pub fn reduce_sgd_traced(
    outputs: &[MapOutputSgd],
    prev_global: &EmbeddingTable,
    strategy: MergeStrategy,
    weighting: AverageWeighting,
    rng: &mut Rng,
) -> Result<(EmbeddingTable, MergeTrace)> {
    merge_sgd(outputs, prev_global, strategy, weighting, &mut |n| rng.gen_range(0..n))
}

/// `pick(n)` chooses an index in `0..n` for the Random strategy.
pub(crate) fn merge_sgd(
    outputs: &[MapOutputSgd],
    prev_global: &EmbeddingTable,
    strategy: MergeStrategy,
    weighting: AverageWeighting,
    pick: &mut dyn FnMut(usize) -> usize,
) -> Result<(EmbeddingTable, MergeTrace)> {
    if outputs.is_empty() {
        return Err(Error::arg("reduce needs at least one map output"));
    }
    for out in outputs {
        if !out.table.same_shape(prev_global) {
            return Err(Error::DimensionMismatch {
                expected: prev_global.dim(),
                actual: out.table.dim(),
            });
        }
    }
    let mut sorted: Vec<&MapOutputSgd> = outputs.iter().collect();
    sorted.sort_by_key(|o| o.worker_id);

    // MiniLoss winner order: lowest normalized loss, then lowest worker id.
    let mut by_loss = sorted.clone();
    by_loss.sort_by(|a, b| {
        a.normalized_loss()
            .total_cmp(&b.normalized_loss())
            .then(a.worker_id.cmp(&b.worker_id))
    });

    let mut merged = prev_global.clone();
    let mut trace = MergeTrace {
        entities: vec![MergeSource::CarryOver; prev_global.n_entities()],
        relations: vec![MergeSource::CarryOver; prev_global.n_relations()],
    };
    let keys = (0..prev_global.n_entities())
        .map(Key::Entity)
        .chain((0..prev_global.n_relations()).map(Key::Relation));
    let mut contributors: Vec<&MapOutputSgd> = Vec::with_capacity(sorted.len());
    for key in keys {
        contributors.clear();
        contributors.extend(sorted.iter().copied().filter(|o| o.counts.get(key) > 0));
        if contributors.is_empty() {
            continue;
        }
        let source = match strategy {
            MergeStrategy::Random => {
                let chosen = if contributors.len() == 1 {
                    contributors[0]
                } else {
                    contributors[pick(contributors.len())]
                };
                key.row_mut(&mut merged).copy_from_slice(key.row(&chosen.table));
                MergeSource::Picked {
                    worker_id: chosen.worker_id,
                }
            }
            MergeStrategy::MiniLoss => {
                let chosen = by_loss
                    .iter()
                    .find(|o| o.counts.get(key) > 0)
                    .expect("contributors is non-empty");
                key.row_mut(&mut merged).copy_from_slice(key.row(&chosen.table));
                MergeSource::Picked {
                    worker_id: chosen.worker_id,
                }
            }
            MergeStrategy::Average => {
                let row = key.row_mut(&mut merged);
                row.fill(0.0);
                let mut total_weight = 0.0;
                for out in &contributors {
                    let w = match weighting {
                        AverageWeighting::Unweighted => 1.0,
                        AverageWeighting::ByUpdateCount => f64::from(out.counts.get(key)),
                    };
                    for (m, v) in row.iter_mut().zip(key.row(&out.table)) {
                        *m += w * v;
                    }
                    total_weight += w;
                }
                row.iter_mut().for_each(|m| *m /= total_weight);
                MergeSource::Averaged {
                    workers: contributors.len(),
                }
            }
        };
        match key {
            Key::Entity(i) => trace.entities[i] = source,
            Key::Relation(i) => trace.relations[i] = source,
        }
    }
    merged.check_finite()?;
    Ok((merged, trace))
}

/// BGD reduce: per row, sums worker gradients in ascending worker order and
/// steps `v ← v − lr · sum / count`, where `count` is the number of terms
/// that touched the row across all workers. Rows without gradient are kept.
pub fn reduce_bgd(
    outputs: &[MapOutputBgd],
    prev_global: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<EmbeddingTable> {
    if outputs.is_empty() {
        return Err(Error::arg("reduce needs at least one map output"));
    }
    let mut sorted: Vec<&MapOutputBgd> = outputs.iter().collect();
    sorted.sort_by_key(|o| o.worker_id);
    let mut merged = prev_global.clone();
    let mut total = vec![0.0; prev_global.dim()];
    let keys = (0..prev_global.n_entities())
        .map(Key::Entity)
        .chain((0..prev_global.n_relations()).map(Key::Relation));
    for key in keys {
        total.fill(0.0);
        let mut count = 0u64;
        for out in &sorted {
            if let Some((sum, c)) = out.grads.get(key) {
                for (t, s) in total.iter_mut().zip(sum) {
                    *t += s;
                }
                count += u64::from(c);
            }
        }
        if count == 0 {
            continue;
        }
        let scale = config.learning_rate / count as f64;
        for (v, g) in key.row_mut(&mut merged).iter_mut().zip(&total) {
            *v -= scale * g;
        }
    }
    merged.check_finite()?;
    Ok(merged)
}

/// One sync round of [`train_mapreduce`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub mode: SyncMode,
    pub strategy: Option<MergeStrategy>,
    pub workers: usize,
    pub loss: f64,
    pub rel: Option<f64>,
    pub active: usize,
    pub map_secs: f64,
    pub reduce_secs: f64,
    /// Partition triples processed per second of map wall-clock, counting
    /// every local epoch.
    pub triples_per_sec: f64,
    pub secs: f64,
}

impl RoundReport {
    pub fn epoch_report(&self) -> EpochReport {
        EpochReport {
            epoch: self.round,
            loss: self.loss,
            rel: self.rel,
            active: self.active,
            secs: self.secs,
        }
    }
}

/// Seed of the corruption stream for `worker` in `round`; worker 0 matches
/// the single-thread trainer's stream for the same epoch.
pub fn worker_seed(base: u64, round: usize, worker: usize) -> u64 {
    seed::derive(base, &[seed::TAG_CORRUPT, round as u64, worker as u64])
}

pub fn bgd_round_seed(base: u64, round: usize) -> u64 {
    seed::derive(base, &[seed::TAG_TRIPLE, round as u64])
}

fn reduce_rng(base: u64, round: usize) -> Rng {
    seed::derived_rng(base, &[seed::TAG_REDUCE, round as u64])
}

/// Runs the map phase on one scoped thread per non-empty partition and
/// returns outputs in worker order. Empty partitions (more workers than
/// triples) are skipped.
fn map_parallel<T: Send>(
    parts: &[Partition],
    map: impl Fn(&Partition) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    for p in parts.iter().filter(|p| p.is_empty()) {
        log::warn!("worker {} has an empty partition; skipping", p.worker_id);
    }
    let map = &map;
    thread::scope(|scope| {
        let handles: Vec<_> = parts
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| scope.spawn(move || map(p)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("map worker panicked"))
            .collect()
    })
}

pub fn train_mapreduce(
    dataset: &Dataset,
    config: &TrainConfig,
    schedule: &SyncSchedule,
    strategy: MergeStrategy,
) -> Result<(EmbeddingTable, Vec<RoundReport>)> {
    train_mapreduce_with(dataset, config, schedule, strategy, |_| {})
}

/// The master loop: normalize → partition → parallel map → reduce →
/// convergence check, until the relative loss change (over summed worker
/// losses) reaches `convergence_eps` or `max_epochs` epochs have run.
pub fn train_mapreduce_with(
    dataset: &Dataset,
    config: &TrainConfig,
    schedule: &SyncSchedule,
    strategy: MergeStrategy,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<(EmbeddingTable, Vec<RoundReport>)> {
    check_trainable(dataset, config)?;
    schedule.validate()?;
    let mut global = EmbeddingTable::init(&dataset.vocab, config.dim, config.seed)?;
    let mut reports: Vec<RoundReport> = Vec::new();
    let weighting = if schedule.weighted_average {
        AverageWeighting::ByUpdateCount
    } else {
        AverageWeighting::Unweighted
    };
    let per_round = match schedule.mode {
        SyncMode::Sgd => schedule.epochs_per_sync,
        SyncMode::Bgd => 1,
    };

    let mut epochs_done = 0;
    let mut round = 0;
    while epochs_done < config.max_epochs {
        let local_epochs = per_round.min(config.max_epochs - epochs_done);
        let start = Instant::now();
        global.normalize_entities()?;
        let parts = partition(&dataset.train, schedule.workers, shuffle_seed(config.seed, round))?;
        let snapshot = &global;

        let (next, loss, active, map_secs, reduce_secs) = match schedule.mode {
            SyncMode::Sgd => {
                let map_start = Instant::now();
                let outputs = map_parallel(&parts, |p| {
                    run_map_sgd(p, snapshot, config, local_epochs, worker_seed(config.seed, round, p.worker_id))
                })?;
                let map_secs = map_start.elapsed().as_secs_f64();
                let reduce_start = Instant::now();
                let (next, _) = reduce_sgd_traced(
                    &outputs,
                    snapshot,
                    strategy,
                    weighting,
                    &mut reduce_rng(config.seed, round),
                )?;
                let loss = outputs.iter().map(|o| o.loss).sum::<f64>();
                let active = outputs.iter().map(|o| o.active).sum();
                (next, loss, active, map_secs, reduce_start.elapsed().as_secs_f64())
            }
            SyncMode::Bgd => {
                let round_seed = bgd_round_seed(config.seed, round);
                let map_start = Instant::now();
                let outputs = map_parallel(&parts, |p| run_map_bgd(p, snapshot, config, round_seed))?;
                let map_secs = map_start.elapsed().as_secs_f64();
                let reduce_start = Instant::now();
                let next = reduce_bgd(&outputs, snapshot, config)?;
                let loss = outputs.iter().map(|o| o.loss).sum::<f64>();
                let active = outputs.iter().map(|o| o.active).sum();
                (next, loss, active, map_secs, reduce_start.elapsed().as_secs_f64())
            }
        };
        global = next;

        let processed = (dataset.train.len() * local_epochs) as f64;
        let rel = reports.last().map(|prev| relative_change(prev.loss, loss));
        let report = RoundReport {
            round,
            mode: schedule.mode,
            strategy: (schedule.mode == SyncMode::Sgd).then_some(strategy),
            workers: schedule.workers,
            loss,
            rel,
            active,
            map_secs,
            reduce_secs,
            triples_per_sec: if map_secs > 0.0 { processed / map_secs } else { f64::INFINITY },
            secs: start.elapsed().as_secs_f64(),
        };
        log::debug!("round {round}: loss {loss:.6} map {map_secs:.4}s");
        on_round(&report);
        reports.push(report);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at round {round}")));
        }
        epochs_done += local_epochs;
        round += 1;
        if rel.is_some_and(|r| r <= config.convergence_eps) {
            break;
        }
    }
    global.check_finite()?;
    Ok((global, reports))
}

/// Times only the map phase for one round from a freshly initialized table:
/// returns `(triples_processed, map_seconds)`.
pub fn measure_map_phase(
    dataset: &Dataset,
    config: &TrainConfig,
    schedule: &SyncSchedule,
    round: usize,
) -> Result<(usize, f64)> {
    check_trainable(dataset, config)?;
    schedule.validate()?;
    let table = EmbeddingTable::init(&dataset.vocab, config.dim, config.seed)?;
    let parts = partition(&dataset.train, schedule.workers, shuffle_seed(config.seed, round))?;
    let start = Instant::now();
    match schedule.mode {
        SyncMode::Sgd => {
            map_parallel(&parts, |p| {
                run_map_sgd(p, &table, config, schedule.epochs_per_sync, worker_seed(config.seed, round, p.worker_id))
            })?;
        }
        SyncMode::Bgd => {
            let round_seed = bgd_round_seed(config.seed, round);
            map_parallel(&parts, |p| run_map_bgd(p, &table, config, round_seed))?;
        }
    }
    let processed = dataset.train.len() * schedule.epochs_per_sync;
    Ok((processed, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_translation_kg, Triple};
    use crate::model::{term_gradients, NormKind};
    use crate::train::train_single;

    fn toy() -> Dataset {
        make_synthetic_translation_kg(30, 3, 4, 30, 5).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            dim: 6,
            max_epochs: 4,
            convergence_eps: 0.0,
            ..TrainConfig::default()
        }
    }

    fn sgd_output(worker_id: usize, rows: Vec<f64>, touched: bool, loss: f64, n: usize) -> MapOutputSgd {
        let table = EmbeddingTable::from_rows(2, rows, vec![0.0, 0.0]).unwrap();
        let mut counts = UpdateCounts::new(table.n_entities(), 1);
        if touched {
            counts.entities[0] = 1;
        }
        MapOutputSgd {
            worker_id,
            table,
            counts,
            loss,
            active: 0,
            n_triples: n,
        }
    }

    // Worker 0's corruption stream must equal the single-thread one.
    fn single_thread_stream_matches(base: u64, round: usize) -> bool {
        use rand::RngCore;
        crate::train::corruption_rng(base, round, 0).next_u64()
            == seed::rng(worker_seed(base, round, 0)).next_u64()
    }

    #[test]
    fn streams_line_up() {
        assert!(single_thread_stream_matches(42, 0));
        assert!(single_thread_stream_matches(7, 13));
    }

    #[test]
    fn merge_examples() {
        let prev = EmbeddingTable::from_rows(2, vec![9.0, 9.0, 5.0, 5.0], vec![0.0, 0.0]).unwrap();
        let outs = vec![
            sgd_output(0, vec![1.0, 1.0, 7.0, 7.0], true, 0.4, 1),
            sgd_output(1, vec![3.0, 3.0, 8.0, 8.0], true, 0.9, 1),
        ];
        let avg = merge_sgd(&outs, &prev, MergeStrategy::Average, AverageWeighting::Unweighted, &mut |_| 0)
            .unwrap()
            .0;
        assert_eq!(avg.entity(0), [2.0, 2.0]);
        // Entity 1 is untouched by both workers.
        assert_eq!(avg.entity(1), [5.0, 5.0]);

        let rnd = merge_sgd(&outs, &prev, MergeStrategy::Random, AverageWeighting::Unweighted, &mut |_| 1)
            .unwrap()
            .0;
        assert_eq!(rnd.entity(0), [3.0, 3.0]);

        let (mini, trace) =
            merge_sgd(&outs, &prev, MergeStrategy::MiniLoss, AverageWeighting::Unweighted, &mut |_| 1).unwrap();
        assert_eq!(mini.entity(0), [1.0, 1.0]);
        assert_eq!(trace.entities, [MergeSource::Picked { worker_id: 0 }, MergeSource::CarryOver]);
    }

    #[test]
    fn miniloss_ties_go_to_lowest_worker() {
        let prev = EmbeddingTable::from_rows(2, vec![0.0; 2], vec![0.0, 0.0]).unwrap();
        let outs = vec![
            sgd_output(2, vec![3.0, 3.0], true, 1.0, 2),
            sgd_output(1, vec![2.0, 2.0], true, 0.5, 1),
        ];
        let (t, _) =
            merge_sgd(&outs, &prev, MergeStrategy::MiniLoss, AverageWeighting::Unweighted, &mut |_| 0).unwrap();
        assert_eq!(t.entity(0), [2.0, 2.0]);
    }

    #[test]
    fn weighted_average() {
        let prev = EmbeddingTable::from_rows(2, vec![0.0; 2], vec![0.0, 0.0]).unwrap();
        let mut a = sgd_output(0, vec![0.0, 0.0], true, 0.0, 1);
        a.counts.entities[0] = 3;
        let b = sgd_output(1, vec![4.0, 8.0], true, 0.0, 1);
        let (t, _) =
            merge_sgd(&[a, b], &prev, MergeStrategy::Average, AverageWeighting::ByUpdateCount, &mut |_| 0).unwrap();
        assert_eq!(t.entity(0), [1.0, 2.0]);
    }

    #[test]
    fn reduce_rejects_bad_input() {
        let prev = EmbeddingTable::from_rows(2, vec![0.0; 2], vec![0.0, 0.0]).unwrap();
        assert!(reduce_sgd(&[], &prev, MergeStrategy::Average, &mut seed::rng(0)).is_err());
        let mut odd = sgd_output(0, vec![0.0, 0.0], true, 0.0, 1);
        odd.table = EmbeddingTable::from_rows(1, vec![0.0], vec![0.0]).unwrap();
        assert!(matches!(
            reduce_sgd(&[odd], &prev, MergeStrategy::Average, &mut seed::rng(0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn map_sgd_locality_and_isolation() {
        let ds = toy();
        let table = EmbeddingTable::init(&ds.vocab, 6, 1).unwrap();
        let before = table.clone();
        let triple = Triple::new(0, 1, 2);
        let part = Partition {
            worker_id: 0,
            indices: vec![0],
            triples: vec![triple],
        };
        let out = run_map_sgd(&part, &table, &cfg(), 1, 9).unwrap();
        assert_eq!(table, before);
        assert_eq!(run_map_sgd(&part, &table, &cfg(), 3, 9).unwrap().counts.relations[0], 0);
        for r in [0, 2] {
            assert_eq!(out.counts.relations[r], 0);
        }
        // Untouched rows of the private copy equal the snapshot.
        for e in 0..table.n_entities() {
            if out.counts.entities[e] == 0 {
                assert_eq!(out.table.entity(e), table.entity(e));
            }
        }
        let empty = Partition {
            worker_id: 1,
            indices: vec![],
            triples: vec![],
        };
        assert!(run_map_sgd(&empty, &table, &cfg(), 1, 0).is_err());
    }

    #[test]
    fn one_worker_matches_single_thread() {
        let ds = toy();
        for strategy in MergeStrategy::ALL {
            let (single, single_reports) = train_single(&ds, &cfg()).unwrap();
            let (mr, mr_reports) = train_mapreduce(&ds, &cfg(), &SyncSchedule::sgd(1), strategy).unwrap();
            assert_eq!(single, mr, "{strategy}");
            let a: Vec<f64> = single_reports.iter().map(|r| r.loss).collect();
            let b: Vec<f64> = mr_reports.iter().map(|r| r.loss).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn map_bgd_basics() {
        let ds = toy();
        let table = EmbeddingTable::init(&ds.vocab, 6, 2).unwrap();
        let config = cfg();
        let whole = Partition {
            worker_id: 0,
            indices: (0..ds.train.len()).collect(),
            triples: ds.train.clone(),
        };
        let before = table.clone();
        let out = run_map_bgd(&whole, &table, &config, 77).unwrap();
        assert_eq!(table, before);
        assert!(!out.grads.is_empty());

        // Single-triple partition equals term_gradients for its one draw.
        let single = Partition {
            worker_id: 0,
            indices: vec![3],
            triples: vec![ds.train[3]],
        };
        let out = run_map_bgd(&single, &table, &config, 77).unwrap();
        let neg = corrupt_unchecked(&ds.train[3], table.n_entities(), &mut triple_rng(77, 3));
        let term = term_gradients(&table, &ds.train[3], &neg, config.margin, config.norm).unwrap();
        assert_eq!(out.loss, term.loss());
        for (key, g) in term.iter() {
            let (sum, count) = out.grads.get(key).unwrap();
            assert_eq!(sum, g);
            assert_eq!(count, 1);
        }
        assert_eq!(out.grads.keys().count(), term.len());
    }

    #[test]
    fn bgd_all_inactive_is_empty() {
        // Huge spacing: every corruption sits far beyond the margin.
        let vocab = crate::data::Vocabulary::from_labels(
            (0..4).map(|i| format!("e{i}")).collect(),
            vec!["r".into()],
        )
        .unwrap();
        let train: Vec<Triple> = (0..3).map(|i| Triple::new(i, 0, i + 1)).collect();
        let ds = Dataset::new(train, vec![], vec![], vocab).unwrap();
        let table = EmbeddingTable::from_rows(1, vec![0.0, 100.0, 200.0, 300.0], vec![100.0]).unwrap();
        let part = &partition(&ds.train, 1, 0).unwrap()[0];
        let out = run_map_bgd(part, &table, &cfg(), 1).unwrap();
        assert!(out.grads.is_empty());
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn bgd_cancellation_and_single_worker_step() {
        let prev = EmbeddingTable::from_rows(2, vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let mk = |id: usize, g: f64| {
            let mut acc = GradientAccumulator::for_table(&prev);
            acc.entity_sums.copy_from_slice(&[g, -g]);
            acc.counts.entities[0] = 2;
            MapOutputBgd {
                worker_id: id,
                grads: acc,
                loss: 0.0,
                active: 0,
                n_triples: 1,
            }
        };
        let config = TrainConfig { learning_rate: 0.5, ..cfg() };
        let merged = reduce_bgd(&[mk(0, 0.3), mk(1, -0.3)], &prev, &config).unwrap();
        assert_eq!(merged, prev);
        let stepped = reduce_bgd(&[mk(0, 0.4)], &prev, &config).unwrap();
        assert_eq!(stepped.entity(0), [1.0 - 0.5 * 0.2, 1.0 + 0.5 * 0.2]);
        assert_eq!(stepped.relation(0), [0.5, 0.5]);
    }

    #[test]
    fn bgd_is_worker_count_invariant() {
        let ds = toy();
        for norm in [NormKind::L1, NormKind::L2] {
            let config = TrainConfig { norm, ..cfg() };
            let (base, _) = train_mapreduce(&ds, &config, &SyncSchedule::bgd(1), MergeStrategy::Average).unwrap();
            for p in [2, 3, 4] {
                let (t, _) = train_mapreduce(&ds, &config, &SyncSchedule::bgd(p), MergeStrategy::Average).unwrap();
                assert!(t.max_abs_diff(&base) <= 1e-9, "P={p} {norm}");
            }
        }
    }

    #[test]
    fn schedule_validation() {
        let ds = toy();
        let mut s = SyncSchedule::sgd(2);
        s.epochs_per_sync = 0;
        assert!(train_mapreduce(&ds, &cfg(), &s, MergeStrategy::Average).is_err());
        assert!(train_mapreduce(&ds, &cfg(), &SyncSchedule::sgd(0), MergeStrategy::Average).is_err());
    }

    #[test]
    fn more_workers_than_triples() {
        let ds = toy();
        let small = Dataset {
            train: ds.train[..3].to_vec(),
            ..ds
        };
        let (t, reports) = train_mapreduce(&small, &cfg(), &SyncSchedule::sgd(5), MergeStrategy::Average).unwrap();
        assert_eq!(reports.len(), 4);
        t.check_finite().unwrap();
    }

    #[test]
    fn strategy_names_round_trip() {
        for m in MergeStrategy::ALL {
            assert_eq!(m.as_str().parse::<MergeStrategy>().unwrap(), m);
        }
        assert!("best".parse::<MergeStrategy>().is_err());
    }
}
