//! Entity inference, relation prediction and triplet classification.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Triple};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{corrupt, triple_energy, NormKind};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Raw,
    Filtered,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Raw => "raw",
            Setting::Filtered => "filtered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Entity,
    Relation,
}

/// Which side of a triple an entity query leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Head,
    Tail,
}

/// Every triple of every split, for the filtered setting.
#[derive(Debug, Clone, Default)]
pub struct KnownTriples(HashSet<Triple>);

impl KnownTriples {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self(
            dataset
                .train
                .iter()
                .chain(&dataset.valid)
                .chain(&dataset.test)
                .copied()
                .collect(),
        )
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.0.contains(t)
    }
}

impl FromIterator<Triple> for KnownTriples {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

fn check_query(table: &EmbeddingTable, t: &Triple) -> Result<()> {
    if t.head >= table.n_entities() || t.tail >= table.n_entities() || t.relation >= table.n_relations() {
        return Err(Error::arg(format!("query {t:?} is outside the vocabulary")));
    }
    Ok(())
}

/// Rank of the true entity among all substitutions at `slot`, ordered by
/// ascending energy with ties broken by ascending entity id. The filtered
/// setting skips candidates that form a known triple.
pub fn rank_entities(
    table: &EmbeddingTable,
    triple: &Triple,
    slot: Slot,
    known: &KnownTriples,
    setting: Setting,
    norm: NormKind,
) -> Result<usize> {
    check_query(table, triple)?;
    let answer = match slot {
        Slot::Head => triple.head,
        Slot::Tail => triple.tail,
    };
    let target = triple_energy(table, triple, norm);
    let mut rank = 1;
    for e in 0..table.n_entities() {
        if e == answer {
            continue;
        }
        let cand = match slot {
            Slot::Head => Triple { head: e, ..*triple },
            Slot::Tail => Triple { tail: e, ..*triple },
        };
        if setting == Setting::Filtered && known.contains(&cand) {
            continue;
        }
        let score = triple_energy(table, &cand, norm);
        if score < target || (score == target && e < answer) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// As [`rank_entities`], with candidates ranging over relations.
pub fn rank_relations(
    table: &EmbeddingTable,
    triple: &Triple,
    known: &KnownTriples,
    setting: Setting,
    norm: NormKind,
) -> Result<usize> {
    check_query(table, triple)?;
    let target = triple_energy(table, triple, norm);
    let mut rank = 1;
    for r in 0..table.n_relations() {
        if r == triple.relation {
            continue;
        }
        let cand = Triple { relation: r, ..*triple };
        if setting == Setting::Filtered && known.contains(&cand) {
            continue;
        }
        let score = triple_energy(table, &cand, norm);
        if score < target || (score == target && r < triple.relation) {
            rank += 1;
        }
    }
    Ok(rank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub task: Task,
    pub setting: Setting,
    pub mean_rank: f64,
    pub hits: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

impl RankingMetrics {
    pub fn from_ranks(task: Task, setting: Setting, ranks: &[usize], ks: &[usize]) -> Self {
        let n = ranks.len();
        let mean_rank = ranks.iter().sum::<usize>() as f64 / n as f64;
        let hits = ks
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64))
            .collect();
        Self {
            task,
            setting,
            mean_rank,
            hits,
            n_queries: n,
        }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }
}

/// All ranks for `triples`; the entity task asks for the tail and then the
/// head of each triple.
pub fn collect_ranks(
    table: &EmbeddingTable,
    triples: &[Triple],
    task: Task,
    known: &KnownTriples,
    setting: Setting,
    norm: NormKind,
) -> Result<Vec<usize>> {
    let mut ranks = Vec::with_capacity(triples.len() * 2);
    for t in triples {
        match task {
            Task::Entity => {
                ranks.push(rank_entities(table, t, Slot::Tail, known, setting, norm)?);
                ranks.push(rank_entities(table, t, Slot::Head, known, setting, norm)?);
            }
            Task::Relation => ranks.push(rank_relations(table, t, known, setting, norm)?),
        }
    }
    Ok(ranks)
}

pub fn evaluate_ranking(
    table: &EmbeddingTable,
    triples: &[Triple],
    task: Task,
    known: &KnownTriples,
    setting: Setting,
    ks: &[usize],
    norm: NormKind,
) -> Result<RankingMetrics> {
    if triples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    if ks.contains(&0) {
        return Err(Error::arg("hits@k needs k >= 1"));
    }
    let ranks = collect_ranks(table, triples, task, known, setting, norm)?;
    Ok(RankingMetrics::from_ranks(task, setting, &ranks, ks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierThresholds {
    pub per_relation: BTreeMap<usize, f64>,
    pub fallback: f64,
}

impl ClassifierThresholds {
    pub fn threshold(&self, relation: usize) -> f64 {
        self.per_relation.get(&relation).copied().unwrap_or(self.fallback)
    }

    /// Positive iff the energy is strictly below the relation's threshold.
    pub fn predict(&self, table: &EmbeddingTable, t: &Triple, norm: NormKind) -> bool {
        triple_energy(table, t, norm) < self.threshold(t.relation)
    }
}

/// Each positive followed by one corrupted negative drawn from `rng`.
pub fn with_corrupted_negatives(
    positives: &[Triple],
    n_entities: usize,
    rng: &mut Rng,
) -> Result<Vec<(Triple, bool)>> {
    let mut out = Vec::with_capacity(positives.len() * 2);
    for t in positives {
        out.push((*t, true));
        out.push((corrupt(t, n_entities, rng)?, false));
    }
    Ok(out)
}

/// The threshold with the highest accuracy among the midpoints between
/// consecutive distinct energies, plus one point below and one above all
/// of them. Ties keep the smallest threshold. Returns `(threshold, correct)`.
pub fn best_threshold(samples: &[(f64, bool)]) -> (f64, usize) {
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let Some(&(lowest, _)) = sorted.first() else {
        return (0.0, 0);
    };
    // Below everything: all predicted negative.
    let mut correct = sorted.iter().filter(|s| !s.1).count();
    let mut best = (lowest - 1.0, correct);
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                correct += 1;
            } else {
                correct -= 1;
            }
            i += 1;
        }
        let threshold = match sorted.get(i) {
            Some(&(next, _)) => value + (next - value) / 2.0,
            None => value + 1.0,
        };
        if correct > best.1 {
            best = (threshold, correct);
        }
    }
    best
}

/// Fits one energy threshold per relation seen in `valid` (each positive
/// paired with one corrupted negative) and a global fallback.
pub fn fit_thresholds(
    table: &EmbeddingTable,
    valid: &[Triple],
    rng: &mut Rng,
    norm: NormKind,
) -> Result<ClassifierThresholds> {
    if valid.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    for t in valid {
        check_query(table, t)?;
    }
    let labeled = with_corrupted_negatives(valid, table.n_entities(), rng)?;
    fit_thresholds_labeled(table, &labeled, norm)
}

pub fn fit_thresholds_labeled(
    table: &EmbeddingTable,
    labeled: &[(Triple, bool)],
    norm: NormKind,
) -> Result<ClassifierThresholds> {
    if labeled.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let mut by_relation: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
    let mut all = Vec::with_capacity(labeled.len());
    for (t, label) in labeled {
        let e = triple_energy(table, t, norm);
        by_relation.entry(t.relation).or_default().push((e, *label));
        all.push((e, *label));
    }
    Ok(ClassifierThresholds {
        per_relation: by_relation
            .into_iter()
            .map(|(r, samples)| (r, best_threshold(&samples).0))
            .collect(),
        fallback: best_threshold(&all).0,
    })
}

/// Fraction of `labeled` triples whose prediction matches the label; 0 for
/// an empty input.
pub fn classify(
    table: &EmbeddingTable,
    thresholds: &ClassifierThresholds,
    labeled: &[(Triple, bool)],
    norm: NormKind,
) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    let correct = labeled
        .iter()
        .filter(|(t, label)| thresholds.predict(table, t, norm) == *label)
        .count();
    correct as f64 / labeled.len() as f64
}
