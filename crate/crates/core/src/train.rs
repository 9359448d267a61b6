//! Single-thread SGD training, the baseline every parallel mode is checked
//! against.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{shuffled_indices, Dataset, Triple};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{corrupt_unchecked, distance, Key, NormKind, TermGradients};
use crate::seed::{self, Rng};

/// Floor on the previous loss in the relative-change test.
pub const REL_LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub norm: NormKind,
    pub max_epochs: usize,
    pub convergence_eps: f64,
    pub seed: u64,
    pub neg_per_pos: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 50,
            margin: 1.0,
            learning_rate: 0.01,
            norm: NormKind::L1,
            max_epochs: 1000,
            convergence_eps: 1e-4,
            seed: 42,
            neg_per_pos: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::arg("dim must be positive"));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::arg(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.convergence_eps.is_nan() || self.convergence_eps < 0.0 {
            return Err(Error::arg(format!(
                "convergence eps must be non-negative, got {}",
                self.convergence_eps
            )));
        }
        if self.neg_per_pos == 0 {
            return Err(Error::arg("neg_per_pos must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    /// `None` for the first epoch, which has nothing to compare against.
    pub rel: Option<f64>,
    pub active: usize,
    pub secs: f64,
}

/// `|prev − cur| / max(prev, 1e-12)`.
pub fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.max(REL_LOSS_FLOOR)
}

/// Per-row counts of SGD steps, used by the map phase to tell touched keys
/// from untouched ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateCounts {
    pub entities: Vec<u32>,
    pub relations: Vec<u32>,
}

impl UpdateCounts {
    pub fn new(n_entities: usize, n_relations: usize) -> Self {
        Self {
            entities: vec![0; n_entities],
            relations: vec![0; n_relations],
        }
    }

    pub fn get(&self, key: Key) -> u32 {
        match key {
            Key::Entity(i) => self.entities[i],
            Key::Relation(i) => self.relations[i],
        }
    }

    fn bump(&mut self, key: Key) {
        match key {
            Key::Entity(i) => self.entities[i] += 1,
            Key::Relation(i) => self.relations[i] += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct PassTotals {
    pub loss: f64,
    pub active: usize,
}

/// One SGD pass over `triples` in order: `neg_per_pos` corruptions per
/// positive, an immediate step per active hinge term.
pub(crate) fn sgd_pass<'a>(
    table: &mut EmbeddingTable,
    triples: impl IntoIterator<Item = &'a Triple>,
    config: &TrainConfig,
    rng: &mut Rng,
    mut counts: Option<&mut UpdateCounts>,
) -> PassTotals {
    let n_entities = table.n_entities();
    let mut grads = TermGradients::new(table.dim());
    let mut totals = PassTotals::default();
    for pos in triples {
        for _ in 0..config.neg_per_pos {
            let neg = corrupt_unchecked(pos, n_entities, rng);
            let loss = grads.compute(table, pos, &neg, config.margin, config.norm);
            if loss > 0.0 {
                grads.apply(table, config.learning_rate);
                totals.loss += loss;
                totals.active += 1;
                if let Some(counts) = counts.as_deref_mut() {
                    for (key, _) in grads.iter() {
                        counts.bump(key);
                    }
                }
            }
        }
    }
    totals
}

pub(crate) fn shuffle_seed(base: u64, epoch: usize) -> u64 {
    seed::derive(base, &[seed::TAG_SHUFFLE, epoch as u64])
}

pub(crate) fn corruption_rng(base: u64, epoch: usize, worker: usize) -> Rng {
    seed::derived_rng(base, &[seed::TAG_CORRUPT, epoch as u64, worker as u64])
}

pub(crate) fn check_trainable(dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if dataset.n_entities() < 2 {
        return Err(Error::TooFewEntities(dataset.n_entities()));
    }
    Ok(())
}

pub fn train_single(dataset: &Dataset, config: &TrainConfig) -> Result<(EmbeddingTable, Vec<EpochReport>)> {
    train_single_with(dataset, config, |_| {})
}

/// Runs the baseline, calling `on_epoch` after every epoch.
///
/// Entities and relations are initialized once; entity vectors are
/// re-normalized at the start of every epoch. Training stops once the
/// relative loss change drops to `convergence_eps` or `max_epochs` is hit.
pub fn train_single_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(EmbeddingTable, Vec<EpochReport>)> {
    check_trainable(dataset, config)?;
    let mut table = EmbeddingTable::init(&dataset.vocab, config.dim, config.seed)?;
    let mut reports: Vec<EpochReport> = Vec::new();

    for epoch in 0..config.max_epochs {
        let start = Instant::now();
        table.normalize_entities()?;
        let order = shuffled_indices(dataset.train.len(), shuffle_seed(config.seed, epoch));
        let mut rng = corruption_rng(config.seed, epoch, 0);
        let totals = sgd_pass(
            &mut table,
            order.iter().map(|&i| &dataset.train[i]),
            config,
            &mut rng,
            None,
        );
        let rel = reports.last().map(|prev| relative_change(prev.loss, totals.loss));
        let report = EpochReport {
            epoch,
            loss: totals.loss,
            rel,
            active: totals.active,
            secs: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {:.6} active {}", report.loss, report.active);
        on_epoch(&report);
        reports.push(report);
        if !totals.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
        }
        if rel.is_some_and(|r| r <= config.convergence_eps) {
            break;
        }
    }
    table.check_finite()?;
    Ok((table, reports))
}

/// Sum of hinge terms over the training set with freshly sampled
/// corruptions; the table is only read.
pub fn epoch_loss(dataset: &Dataset, table: &EmbeddingTable, config: &TrainConfig, rng: &mut Rng) -> Result<f64> {
    check_trainable(dataset, config)?;
    let n = table.n_entities();
    let mut total = 0.0;
    for pos in &dataset.train {
        let d_pos = distance(
            table.entity(pos.head),
            table.relation(pos.relation),
            table.entity(pos.tail),
            config.norm,
        );
        for _ in 0..config.neg_per_pos {
            let neg = corrupt_unchecked(pos, n, rng);
            let d_neg = distance(
                table.entity(neg.head),
                table.relation(neg.relation),
                table.entity(neg.tail),
                config.norm,
            );
            total += (config.margin + d_pos - d_neg).max(0.0);
        }
    }
    Ok(total)
}
