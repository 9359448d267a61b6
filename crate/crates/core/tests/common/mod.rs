//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the code paths it is used to check: energies,
//! losses and ranks are recomputed from raw table rows.

#![allow(dead_code)]

use std::collections::HashSet;

use pkge_core::data::{make_synthetic_translation_kg, Dataset, Triple, Vocabulary};
use pkge_core::embedding::EmbeddingTable;
use pkge_core::model::NormKind;
use pkge_core::train::TrainConfig;
use rand::Rng;

/// The synthetic KG most acceptance criteria run on.
pub fn acceptance_dataset() -> Dataset {
    make_synthetic_translation_kg(50, 4, 16, 100, 42).unwrap()
}

pub fn acceptance_config() -> TrainConfig {
    TrainConfig {
        dim: 16,
        margin: 1.0,
        learning_rate: 0.01,
        norm: NormKind::L1,
        max_epochs: 200,
        convergence_eps: 0.0,
        seed: 42,
        neg_per_pos: 1,
    }
}

pub fn oracle_energy(table: &EmbeddingTable, t: &Triple, norm: NormKind) -> f64 {
    let h = table.entity(t.head);
    let r = table.relation(t.relation);
    let tl = table.entity(t.tail);
    let mut acc = 0.0;
    for i in 0..h.len() {
        let d = h[i] + r[i] - tl[i];
        acc += match norm {
            NormKind::L1 => d.abs(),
            NormKind::L2 => d * d,
        };
    }
    match norm {
        NormKind::L1 => acc,
        NormKind::L2 => acc.sqrt(),
    }
}

pub fn oracle_term_loss(table: &EmbeddingTable, pos: &Triple, neg: &Triple, margin: f64, norm: NormKind) -> f64 {
    (margin + oracle_energy(table, pos, norm) - oracle_energy(table, neg, norm)).max(0.0)
}

/// Sorts every substitution by (energy, id) and returns the 1-based position
/// of the true answer after dropping filtered candidates.
fn oracle_rank(
    table: &EmbeddingTable,
    candidates: Vec<(usize, Triple)>,
    answer: usize,
    known: Option<&HashSet<Triple>>,
    norm: NormKind,
) -> usize {
    let mut scored: Vec<(f64, usize)> = candidates
        .into_iter()
        .filter(|(id, t)| *id == answer || known.is_none_or(|k| !k.contains(t)))
        .map(|(id, t)| (oracle_energy(table, &t, norm), id))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.iter().position(|&(_, id)| id == answer).unwrap() + 1
}

pub fn oracle_tail_rank(table: &EmbeddingTable, t: &Triple, known: Option<&HashSet<Triple>>, norm: NormKind) -> usize {
    let cands = (0..table.n_entities()).map(|e| (e, Triple { tail: e, ..*t })).collect();
    oracle_rank(table, cands, t.tail, known, norm)
}

pub fn oracle_head_rank(table: &EmbeddingTable, t: &Triple, known: Option<&HashSet<Triple>>, norm: NormKind) -> usize {
    let cands = (0..table.n_entities()).map(|e| (e, Triple { head: e, ..*t })).collect();
    oracle_rank(table, cands, t.head, known, norm)
}

pub fn oracle_relation_rank(table: &EmbeddingTable, t: &Triple, known: Option<&HashSet<Triple>>, norm: NormKind) -> usize {
    let cands = (0..table.n_relations()).map(|r| (r, Triple { relation: r, ..*t })).collect();
    oracle_rank(table, cands, t.relation, known, norm)
}

/// A random KB with at most `max_e` entities and `max_r` relations, its
/// triples split three ways, and a random table. With `quantized` the table
/// takes values in {-1, 0, 1} so that energy ties are common.
pub fn random_kb<R: Rng>(rng: &mut R, max_e: usize, max_r: usize, quantized: bool) -> (Dataset, EmbeddingTable) {
    let n_e = rng.gen_range(2..=max_e);
    let n_r = rng.gen_range(1..=max_r);
    let dim = rng.gen_range(1..=4);
    let mut all: Vec<Triple> = Vec::new();
    for h in 0..n_e {
        for r in 0..n_r {
            for t in 0..n_e {
                if rng.gen_bool(0.3) {
                    all.push(Triple::new(h, r, t));
                }
            }
        }
    }
    if all.len() < 3 {
        all = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 0), Triple::new(0, 0, 0)];
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (i, t) in all.into_iter().enumerate() {
        match i % 3 {
            0 => test.push(t),
            1 => valid.push(t),
            _ => train.push(t),
        }
    }
    let vocab = Vocabulary::from_labels(
        (0..n_e).map(|i| format!("e{i}")).collect(),
        (0..n_r).map(|i| format!("r{i}")).collect(),
    )
    .unwrap();
    let mut value = |_| {
        if quantized {
            f64::from(rng.gen_range(-1i32..=1))
        } else {
            rng.gen_range(-1.0..1.0)
        }
    };
    let entities = (0..n_e * dim).map(&mut value).collect();
    let relations = (0..n_r * dim).map(&mut value).collect();
    let table = EmbeddingTable::from_rows(dim, entities, relations).unwrap();
    (Dataset::new(train, valid, test, vocab).unwrap(), table)
}

pub fn known_set(ds: &Dataset) -> HashSet<Triple> {
    ds.train.iter().chain(&ds.valid).chain(&ds.test).copied().collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
