//! The parameter space: one dense vector per entity and per relation.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::seed;
use crate::train::TrainConfig;

/// Row-major entity and relation matrices sharing one dimension.
///
/// `Clone` is the snapshot operation: the copy shares no storage with the
/// original.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(n_entities: usize, n_relations: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("dim must be at least 1"));
        }
        Ok(Self {
            dim,
            entities: vec![0.0; n_entities * dim],
            relations: vec![0.0; n_relations * dim],
        })
    }

    pub fn from_rows(dim: usize, entities: Vec<f64>, relations: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("dim must be at least 1"));
        }
        for (what, data) in [("entity", &entities), ("relation", &relations)] {
            if data.len() % dim != 0 {
                return Err(Error::arg(format!(
                    "{what} storage of length {} is not a multiple of dim {dim}",
                    data.len()
                )));
            }
        }
        let table = Self {
            dim,
            entities,
            relations,
        };
        table.check_finite()?;
        Ok(table)
    }

    /// Components drawn i.i.d. from `Uniform(-6/√dim, 6/√dim)`, relations
    /// first, without normalization.
    pub fn uniform(n_entities: usize, n_relations: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::zeros(n_entities, n_relations, dim)?;
        let bound = init_bound(dim);
        let mut rng = seed::derived_rng(seed, &[seed::TAG_INIT]);
        for x in table.relations.iter_mut().chain(table.entities.iter_mut()) {
            *x = rng.gen_range(-bound..=bound);
        }
        Ok(table)
    }

    /// Uniform initialization followed by unit-L2 scaling of every vector.
    pub fn init(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        Self::init_sized(vocab.n_entities(), vocab.n_relations(), dim, seed)
    }

    pub fn init_sized(n_entities: usize, n_relations: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::uniform(n_entities, n_relations, dim, seed)?;
        for (i, row) in table.relations.chunks_exact_mut(dim).enumerate() {
            if !scale_to_unit(row) {
                return Err(Error::NonFinite(format!("relation {i} initialized to zero")));
            }
        }
        table.normalize_entities()?;
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len() / self.dim
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len() / self.dim
    }

    pub fn entity(&self, id: usize) -> &[f64] {
        &self.entities[id * self.dim..(id + 1) * self.dim]
    }

    pub fn relation(&self, id: usize) -> &[f64] {
        &self.relations[id * self.dim..(id + 1) * self.dim]
    }

    pub fn entity_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.entities[id * self.dim..(id + 1) * self.dim]
    }

    pub fn relation_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.relations[id * self.dim..(id + 1) * self.dim]
    }

    pub fn entity_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entities.chunks_exact(self.dim)
    }

    pub fn relation_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.relations.chunks_exact(self.dim)
    }

    /// Scales every entity vector to unit L2 norm; relations are untouched.
    /// Fails without modifying anything if some entity vector is zero.
    pub fn normalize_entities(&mut self) -> Result<()> {
        if let Some(entity) = self
            .entities
            .chunks_exact(self.dim)
            .position(|row| row.iter().all(|&x| x == 0.0))
        {
            return Err(Error::ZeroNorm { entity });
        }
        for row in self.entities.chunks_exact_mut(self.dim) {
            scale_to_unit(row);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.entities.len() == other.entities.len()
            && self.relations.len() == other.relations.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.entities.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("entity {}", i / self.dim)));
        }
        if let Some(i) = self.relations.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("relation {}", i / self.dim)));
        }
        Ok(())
    }

    /// Largest absolute component-wise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if !self.same_shape(other) {
            return f64::INFINITY;
        }
        self.entities
            .iter()
            .zip(&other.entities)
            .chain(self.relations.iter().zip(&other.relations))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn init_bound(dim: usize) -> f64 {
    6.0 / (dim as f64).sqrt()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scale_to_unit(row: &mut [f64]) -> bool {
    let norm = l2_norm(row);
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    row.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Training context stored next to a checkpoint (in the run manifest; the
/// text format itself carries only vocabulary and vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub meta: Option<CheckpointMeta>,
}

const MAGIC: &str = "PKGE v1";

/// Renders the text checkpoint:
///
/// ```text
/// PKGE v1
/// dim <d> entities <|E|> relations <|R|>
/// E <label> <v1> ... <vd>
/// R <label> <v1> ... <vd>
/// ```
///
/// Values carry 17 significant digits, which round-trips an `f64` exactly.
/// Labels are escaped so they never contain whitespace: `\\`, `\s`, `\t`,
/// `\n`, `\r`, and `\e` for the empty label.
pub fn render_checkpoint(table: &EmbeddingTable, vocab: &Vocabulary) -> Result<String> {
    if table.n_entities() != vocab.n_entities() || table.n_relations() != vocab.n_relations() {
        return Err(Error::arg(format!(
            "table has {}/{} rows, vocabulary {}/{} labels",
            table.n_entities(),
            table.n_relations(),
            vocab.n_entities(),
            vocab.n_relations()
        )));
    }
    table.check_finite()?;
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(
        out,
        "dim {} entities {} relations {}",
        table.dim(),
        table.n_entities(),
        table.n_relations()
    )
    .unwrap();
    let rows = vocab
        .entity_labels()
        .iter()
        .zip(table.entity_rows())
        .map(|r| ('E', r))
        .chain(vocab.relation_labels().iter().zip(table.relation_rows()).map(|r| ('R', r)));
    for (tag, (label, row)) in rows {
        write!(out, "{tag} {}", escape_label(label)).unwrap();
        for v in row {
            write!(out, " {v:.16e}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save(table: &EmbeddingTable, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let text = render_checkpoint(table, vocab)?;
    let mut file = fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    file.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelCheckpoint> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

pub fn parse_checkpoint(text: &str) -> Result<ModelCheckpoint> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if header != MAGIC {
        return Err(Error::CheckpointVersion(header.to_owned()));
    }
    let shape_err = |message: &str| Error::CheckpointRow {
        line: 2,
        message: message.to_owned(),
    };
    let shape = lines.next().ok_or(Error::CheckpointTruncated {
        expected: 1,
        found: 0,
    })?;
    let fields: Vec<&str> = shape.1.split(' ').collect();
    let (dim, n_e, n_r) = match fields[..] {
        ["dim", d, "entities", e, "relations", r] => {
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| shape_err(&format!("bad count {s:?}")))
            };
            (num(d)?, num(e)?, num(r)?)
        }
        _ => return Err(shape_err("expected `dim <d> entities <n> relations <m>`")),
    };
    if dim == 0 {
        return Err(shape_err("dim must be positive"));
    }

    let mut entity_labels = Vec::with_capacity(n_e);
    let mut relation_labels = Vec::with_capacity(n_r);
    let mut entities = Vec::with_capacity(n_e * dim);
    let mut relations = Vec::with_capacity(n_r * dim);
    let mut found = 0;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() && found == n_e + n_r {
            continue;
        }
        let row_err = |message: String| Error::CheckpointRow {
            line: line_no,
            message,
        };
        if found == n_e + n_r {
            return Err(row_err(format!("unexpected row beyond the declared {found}")));
        }
        let expected_tag = if found < n_e { "E" } else { "R" };
        let mut parts = line.split(' ');
        let tag = parts.next().unwrap_or("");
        if tag != expected_tag {
            return Err(row_err(format!("expected tag {expected_tag}, found {tag:?}")));
        }
        let label = parts
            .next()
            .ok_or_else(|| row_err("missing label".into()))
            .and_then(|l| unescape_label(l).ok_or_else(|| row_err(format!("bad label {l:?}"))))?;
        let values = parts
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| row_err(format!("bad value {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(row_err(format!(
                "expected {dim} components, found {}",
                values.len()
            )));
        }
        if found < n_e {
            entity_labels.push(label);
            entities.extend(values);
        } else {
            relation_labels.push(label);
            relations.extend(values);
        }
        found += 1;
    }
    if found < n_e + n_r {
        return Err(Error::CheckpointTruncated {
            expected: n_e + n_r,
            found,
        });
    }
    Ok(ModelCheckpoint {
        vocab: Vocabulary::from_labels(entity_labels, relation_labels)?,
        table: EmbeddingTable::from_rows(dim, entities, relations)?,
        meta: None,
    })
}

fn escape_label(label: &str) -> String {
    if label.is_empty() {
        return "\\e".into();
    }
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_label(s: &str) -> Option<String> {
    if s == "\\e" {
        return Some(String::new());
    }
    if s.is_empty() {
        return None;
    }
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            's' => ' ',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}
