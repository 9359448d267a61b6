//! Triples, vocabularies, datasets and partitioning.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// An integer-encoded fact `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

/// Bidirectional label/id maps for entities and relations. Ids are dense and
/// assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from ordered label lists. Duplicate labels are an
    /// error since they would break the id round-trip.
    pub fn from_labels(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let mut vocab = Self::new();
        for label in entities {
            if vocab.entity_ids.contains_key(&label) {
                return Err(Error::arg(format!("duplicate entity label {label:?}")));
            }
            vocab.intern_entity(&label);
        }
        for label in relations {
            if vocab.relation_ids.contains_key(&label) {
                return Err(Error::arg(format!("duplicate relation label {label:?}")));
            }
            vocab.intern_relation(&label);
        }
        Ok(vocab)
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entity_ids.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relation_ids.get(label).copied()
    }

    pub fn entity_label(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_label(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relations
    }

    pub fn intern_entity(&mut self, label: &str) -> usize {
        intern(&mut self.entities, &mut self.entity_ids, label)
    }

    pub fn intern_relation(&mut self, label: &str) -> usize {
        intern(&mut self.relations, &mut self.relation_ids, label)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        t.head < self.n_entities() && t.tail < self.n_entities() && t.relation < self.n_relations()
    }
}

fn intern(labels: &mut Vec<String>, ids: &mut HashMap<String, usize>, label: &str) -> usize {
    if let Some(&id) = ids.get(label) {
        return id;
    }
    let id = labels.len();
    labels.push(label.to_owned());
    ids.insert(label.to_owned(), id);
    id
}

/// What to do with triples whose labels are missing from a fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    #[default]
    Reject,
    Drop,
}

#[derive(Debug, Clone)]
pub struct LoadedTriples {
    pub triples: Vec<Triple>,
    pub vocab: Vocabulary,
    pub duplicates: usize,
    pub dropped_oov: usize,
}

/// Loads a tab-separated triple file. Without a vocabulary one is built in
/// first-appearance order; with one, unknown labels are an error.
pub fn load_triples(path: &Path, vocab: Option<&Vocabulary>) -> Result<LoadedTriples> {
    load_triples_with(path, vocab, OovPolicy::Reject)
}

pub fn load_triples_with(
    path: &Path,
    vocab: Option<&Vocabulary>,
    oov: OovPolicy,
) -> Result<LoadedTriples> {
    let text = fs::read_to_string(path)?;
    parse_triples(&text, path, vocab, oov)
}

pub(crate) fn parse_triples(
    text: &str,
    path: &Path,
    fixed: Option<&Vocabulary>,
    oov: OovPolicy,
) -> Result<LoadedTriples> {
    let mut vocab = fixed.cloned().unwrap_or_default();
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    let mut duplicates = 0;
    let mut dropped_oov = 0;
    let mut unknown: Vec<String> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [h, r, t] = fields[..] else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };

        let triple = if fixed.is_some() {
            let ids = (vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t));
            match ids {
                (Some(h), Some(r), Some(t)) => Triple::new(h, r, t),
                _ => {
                    if oov == OovPolicy::Drop {
                        dropped_oov += 1;
                    } else {
                        let missing = [
                            (ids.0.is_none(), h),
                            (ids.1.is_none(), r),
                            (ids.2.is_none(), t),
                        ];
                        for (absent, label) in missing {
                            if absent && !unknown.iter().any(|u| u == label) {
                                unknown.push(label.to_owned());
                            }
                        }
                    }
                    continue;
                }
            }
        } else {
            let h = vocab.intern_entity(h);
            let r = vocab.intern_relation(r);
            let t = vocab.intern_entity(t);
            Triple::new(h, r, t)
        };

        if seen.insert(triple) {
            triples.push(triple);
        } else {
            duplicates += 1;
        }
    }

    if !unknown.is_empty() {
        return Err(Error::UnknownLabels { labels: unknown });
    }
    Ok(LoadedTriples {
        triples,
        vocab,
        duplicates,
        dropped_oov,
    })
}

/// Immutable train/valid/test splits over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub vocab: Vocabulary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub duplicates: usize,
    pub dropped_oov: usize,
}

impl Dataset {
    pub fn new(
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        vocab: Vocabulary,
    ) -> Result<Self> {
        for (name, split) in [("train", &train), ("valid", &valid), ("test", &test)] {
            if let Some(bad) = split.iter().find(|t| !vocab.contains(t)) {
                return Err(Error::arg(format!("{name} triple {bad:?} is outside the vocabulary")));
            }
            let mut seen = HashSet::with_capacity(split.len());
            if let Some(dup) = split.iter().find(|t| !seen.insert(**t)) {
                return Err(Error::arg(format!("{name} contains duplicate triple {dup:?}")));
            }
        }
        Ok(Self {
            train,
            valid,
            test,
            vocab,
        })
    }

    /// Loads the splits. The training file defines the vocabulary; the other
    /// splits are resolved against it under `oov`.
    pub fn load(
        train: &Path,
        valid: Option<&Path>,
        test: Option<&Path>,
        oov: OovPolicy,
    ) -> Result<(Self, LoadStats)> {
        let loaded = load_triples(train, None)?;
        let mut stats = LoadStats {
            duplicates: loaded.duplicates,
            dropped_oov: 0,
        };
        let vocab = loaded.vocab;
        let mut load_split = |path: Option<&Path>| -> Result<Vec<Triple>> {
            let Some(path) = path else { return Ok(Vec::new()) };
            let split = load_triples_with(path, Some(&vocab), oov)?;
            stats.duplicates += split.duplicates;
            stats.dropped_oov += split.dropped_oov;
            Ok(split.triples)
        };
        let valid = load_split(valid)?;
        let test = load_split(test)?;
        Ok((
            Self {
                train: loaded.triples,
                valid,
                test,
                vocab,
            },
            stats,
        ))
    }

    pub fn n_entities(&self) -> usize {
        self.vocab.n_entities()
    }

    pub fn n_relations(&self) -> usize {
        self.vocab.n_relations()
    }
}

/// A balanced slice of the training set owned by one map worker.
///
/// `indices[i]` is the position of `triples[i]` in the training split; BGD
/// keys its per-triple random draws on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub worker_id: usize,
    pub indices: Vec<usize>,
    pub triples: Vec<Triple>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    order
}

/// Shuffles `train` with `seed` and cuts it into `workers` contiguous chunks
/// whose sizes differ by at most one. The first `len % workers` chunks get
/// the extra triple.
pub fn partition(train: &[Triple], workers: usize, seed: u64) -> Result<Vec<Partition>> {
    if workers == 0 {
        return Err(Error::arg("workers must be at least 1"));
    }
    let order = shuffled_indices(train.len(), seed);
    let base = train.len() / workers;
    let extra = train.len() % workers;
    let mut start = 0;
    Ok((0..workers)
        .map(|worker_id| {
            let size = base + usize::from(worker_id < extra);
            let indices = order[start..start + size].to_vec();
            start += size;
            Partition {
                worker_id,
                triples: indices.iter().map(|&i| train[i]).collect(),
                indices,
            }
        })
        .collect())
}

const TRANSLATION_SCALE: f64 = 0.15;

/// Latent geometry behind a synthetic translation KG.
#[derive(Debug, Clone)]
pub struct LatentSpace {
    pub points: Vec<Vec<f64>>,
    pub translations: Vec<Vec<f64>>,
}

impl LatentSpace {
    /// Entity points uniform in `[-1, 1]^dim`; translations uniform in
    /// `[-0.15, 0.15]^dim`. Short translations keep `h + r` inside the point
    /// cloud, so the nearest entity is a genuine neighbour rather than a hub
    /// on the boundary.
    pub fn sample(n_entities: usize, n_relations: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut draw = |n: usize, scale: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect())
                .collect()
        };
        let points = draw(n_entities, 1.0);
        let translations = draw(n_relations, TRANSLATION_SCALE);
        Self {
            points,
            translations,
        }
    }

    /// The entity (other than `exclude`) closest to `query` in squared
    /// Euclidean distance; ties go to the lowest id.
    pub fn nearest(&self, query: &[f64], exclude: usize) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (id, p) in self.points.iter().enumerate() {
            if id == exclude {
                continue;
            }
            let d: f64 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// Emits `(h, r, nearest(h + r))` for `triples_per_relation` heads per
    /// relation. Heads cycle through a seeded permutation of the entities, so
    /// the first `n_entities` draws of a relation are distinct. Duplicates are
    /// dropped, order of first appearance kept.
    pub fn triples(&self, triples_per_relation: usize, seed: u64) -> Vec<Triple> {
        let n = self.points.len();
        let mut rng = seed::rng(seed);
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut query = Vec::new();
        for (r, translation) in self.translations.iter().enumerate() {
            let mut heads: Vec<usize> = (0..n).collect();
            heads.shuffle(&mut rng);
            for &h in heads.iter().cycle().take(triples_per_relation) {
                query.clear();
                query.extend(self.points[h].iter().zip(translation).map(|(a, b)| a + b));
                if let Some(t) = self.nearest(&query, h) {
                    let triple = Triple::new(h, r, t);
                    if seen.insert(triple) {
                        out.push(triple);
                    }
                }
            }
        }
        out
    }
}

/// A synthetic KG whose facts follow a hidden translation geometry: for
/// sampled heads `h`, the tail is the entity nearest to `h + r`. Unique
/// triples are split 80/10/10 into train/valid/test.
pub fn make_synthetic_translation_kg(
    n_entities: usize,
    n_relations: usize,
    dim: usize,
    triples_per_relation: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_entities < 2 || n_relations == 0 || dim == 0 || triples_per_relation == 0 {
        return Err(Error::arg(
            "synthetic KG needs n_entities >= 2 and positive n_relations, dim, triples_per_relation",
        ));
    }
    let space = LatentSpace::sample(n_entities, n_relations, dim, seed::derive(seed, &[0]));
    let triples = space.triples(triples_per_relation, seed::derive(seed, &[1]));
    Ok(split_dataset(
        triples,
        n_entities,
        n_relations,
        seed::derive(seed, &[2]),
    ))
}

/// Shuffles and splits 80/10/10 with labels `e<i>` / `r<j>`.
pub fn split_dataset(
    mut triples: Vec<Triple>,
    n_entities: usize,
    n_relations: usize,
    seed: u64,
) -> Dataset {
    triples.shuffle(&mut seed::rng(seed));
    let n_valid = triples.len() / 10;
    let n_test = triples.len() / 10;
    let test = triples.split_off(triples.len() - n_test);
    let valid = triples.split_off(triples.len() - n_valid);
    let vocab = Vocabulary::from_labels(
        (0..n_entities).map(|i| format!("e{i}")).collect(),
        (0..n_relations).map(|j| format!("r{j}")).collect(),
    )
    .expect("generated labels are unique");
    Dataset {
        train: triples,
        valid,
        test,
        vocab,
    }
}
