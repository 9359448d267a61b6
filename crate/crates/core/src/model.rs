//! Translation energy, margin ranking loss, negative sampling and the
//! subgradient of one loss term.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Triple;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum NormKind {
    #[default]
    L1,
    L2,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L1 => "L1",
            NormKind::L2 => "L2",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" | "l1" => Ok(NormKind::L1),
            "L2" | "l2" => Ok(NormKind::L2),
            _ => Err(Error::arg(format!("unknown norm {s:?} (expected L1 or L2)"))),
        }
    }
}

/// Identifies one row of the embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Entity(usize),
    Relation(usize),
}

impl Key {
    pub fn row<'a>(&self, table: &'a EmbeddingTable) -> &'a [f64] {
        match *self {
            Key::Entity(i) => table.entity(i),
            Key::Relation(i) => table.relation(i),
        }
    }

    pub fn row_mut<'a>(&self, table: &'a mut EmbeddingTable) -> &'a mut [f64] {
        match *self {
            Key::Entity(i) => table.entity_mut(i),
            Key::Relation(i) => table.relation_mut(i),
        }
    }
}

/// `‖h + r − t‖` under `norm`.
pub fn energy(h: &[f64], r: &[f64], t: &[f64], norm: NormKind) -> Result<f64> {
    for v in [r, t] {
        if v.len() != h.len() {
            return Err(Error::DimensionMismatch {
                expected: h.len(),
                actual: v.len(),
            });
        }
    }
    Ok(distance(h, r, t, norm))
}

#[inline]
pub(crate) fn distance(h: &[f64], r: &[f64], t: &[f64], norm: NormKind) -> f64 {
    let diffs = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
    match norm {
        NormKind::L1 => diffs.map(f64::abs).sum(),
        NormKind::L2 => diffs.map(|x| x * x).sum::<f64>().sqrt(),
    }
}

pub fn triple_energy(table: &EmbeddingTable, t: &Triple, norm: NormKind) -> f64 {
    distance(
        table.entity(t.head),
        table.relation(t.relation),
        table.entity(t.tail),
        norm,
    )
}

/// `max(0, margin + d_pos − d_neg)`.
pub fn hinge(margin: f64, d_pos: f64, d_neg: f64) -> Result<f64> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::arg(format!("margin must be positive, got {margin}")));
    }
    Ok((margin + d_pos - d_neg).max(0.0))
}

/// Replaces the head (probability 1/2) or the tail with a different entity
/// drawn uniformly. The relation is never touched.
pub fn corrupt<R: Rng + ?Sized>(triple: &Triple, n_entities: usize, rng: &mut R) -> Result<Triple> {
    if n_entities < 2 {
        return Err(Error::TooFewEntities(n_entities));
    }
    Ok(corrupt_unchecked(triple, n_entities, rng))
}

#[inline]
pub(crate) fn corrupt_unchecked<R: Rng + ?Sized>(
    triple: &Triple,
    n_entities: usize,
    rng: &mut R,
) -> Triple {
    let replace_head = rng.gen_bool(0.5);
    let old = if replace_head { triple.head } else { triple.tail };
    let mut e = rng.gen_range(0..n_entities - 1);
    if e >= old {
        e += 1;
    }
    if replace_head {
        Triple { head: e, ..*triple }
    } else {
        Triple { tail: e, ..*triple }
    }
}

/// Gradient of `‖x‖` w.r.t. `x`: `sign(x)` for L1 (0 at a kink), `x/‖x‖₂`
/// for L2 (zero vector at the origin).
fn norm_gradient(x: &[f64], norm: NormKind, out: &mut [f64]) {
    match norm {
        NormKind::L1 => {
            for (o, &v) in out.iter_mut().zip(x) {
                *o = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
        }
        NormKind::L2 => {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                out.fill(0.0);
            } else {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v / n;
                }
            }
        }
    }
}

/// Keyed subgradient of one hinge term `[γ + d(h,r,t) − d(h',r,t')]₊`.
///
/// Rows touched more than once (a head shared by the positive and corrupted
/// triple, say) are accumulated into a single entry. The buffers are reused
/// across calls.
#[derive(Debug, Clone, Default)]
pub struct TermGradients {
    dim: usize,
    loss: f64,
    keys: Vec<Key>,
    values: Vec<f64>,
    pos_diff: Vec<f64>,
    neg_diff: Vec<f64>,
    pos_grad: Vec<f64>,
    neg_grad: Vec<f64>,
}

impl TermGradients {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            loss: 0.0,
            keys: Vec::with_capacity(5),
            values: Vec::with_capacity(5 * dim),
            pos_diff: vec![0.0; dim],
            neg_diff: vec![0.0; dim],
            pos_grad: vec![0.0; dim],
            neg_grad: vec![0.0; dim],
        }
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn get(&self, key: Key) -> Option<&[f64]> {
        let i = self.keys.iter().position(|&k| k == key)?;
        Some(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Key, &[f64])> {
        self.keys.iter().copied().zip(self.values.chunks_exact(self.dim))
    }

    fn clear(&mut self) {
        self.loss = 0.0;
        self.keys.clear();
        self.values.clear();
    }

    fn add(&mut self, key: Key, sign: f64, g: &[f64]) {
        let dim = self.dim;
        let slot = match self.keys.iter().position(|&k| k == key) {
            Some(i) => &mut self.values[i * dim..(i + 1) * dim],
            None => {
                self.keys.push(key);
                let start = self.values.len();
                self.values.resize(start + dim, 0.0);
                &mut self.values[start..]
            }
        };
        for (s, &v) in slot.iter_mut().zip(g) {
            *s += sign * v;
        }
    }

    /// Recomputes the term for `pos` against `neg` (which must share its
    /// relation) and returns the term loss. An inactive hinge leaves the
    /// gradient map empty.
    pub fn compute(
        &mut self,
        table: &EmbeddingTable,
        pos: &Triple,
        neg: &Triple,
        margin: f64,
        norm: NormKind,
    ) -> f64 {
        debug_assert_eq!(pos.relation, neg.relation);
        if self.dim != table.dim() {
            *self = Self::new(table.dim());
        }
        self.clear();
        let r = table.relation(pos.relation);
        fill_diff(&mut self.pos_diff, table.entity(pos.head), r, table.entity(pos.tail));
        fill_diff(&mut self.neg_diff, table.entity(neg.head), r, table.entity(neg.tail));
        let d_pos = vector_norm(&self.pos_diff, norm);
        let d_neg = vector_norm(&self.neg_diff, norm);
        let loss = margin + d_pos - d_neg;
        if loss <= 0.0 {
            return 0.0;
        }
        self.loss = loss;

        norm_gradient(&self.pos_diff, norm, &mut self.pos_grad);
        norm_gradient(&self.neg_diff, norm, &mut self.neg_grad);
        let pos_grad = std::mem::take(&mut self.pos_grad);
        let neg_grad = std::mem::take(&mut self.neg_grad);
        self.add(Key::Entity(pos.head), 1.0, &pos_grad);
        self.add(Key::Relation(pos.relation), 1.0, &pos_grad);
        self.add(Key::Entity(pos.tail), -1.0, &pos_grad);
        self.add(Key::Entity(neg.head), -1.0, &neg_grad);
        self.add(Key::Relation(pos.relation), -1.0, &neg_grad);
        self.add(Key::Entity(neg.tail), 1.0, &neg_grad);
        self.pos_grad = pos_grad;
        self.neg_grad = neg_grad;
        loss
    }

    /// `v ← v − lr · g` for every entry.
    pub fn apply(&self, table: &mut EmbeddingTable, lr: f64) {
        for (key, g) in self.iter() {
            for (v, gi) in key.row_mut(table).iter_mut().zip(g) {
                *v -= lr * gi;
            }
        }
    }
}

/// One-shot form of [`TermGradients::compute`].
pub fn term_gradients(
    table: &EmbeddingTable,
    pos: &Triple,
    neg: &Triple,
    margin: f64,
    norm: NormKind,
) -> Result<TermGradients> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::arg(format!("margin must be positive, got {margin}")));
    }
    if pos.relation != neg.relation {
        return Err(Error::arg("corrupted triple must keep the relation"));
    }
    let mut grads = TermGradients::new(table.dim());
    grads.compute(table, pos, neg, margin, norm);
    Ok(grads)
}

fn fill_diff(out: &mut [f64], h: &[f64], r: &[f64], t: &[f64]) {
    for (((o, h), r), t) in out.iter_mut().zip(h).zip(r).zip(t) {
        *o = h + r - t;
    }
}

fn vector_norm(x: &[f64], norm: NormKind) -> f64 {
    match norm {
        NormKind::L1 => x.iter().map(|v| v.abs()).sum(),
        NormKind::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}
