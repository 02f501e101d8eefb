//! Translational embeddings used as the frozen initial representation of
//! every entity and relation.
//!
//! Row `i < num_entities` holds entity `i`; relation `r` lives at row
//! `num_entities + r.index()`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Relation};
use crate::linalg::{norm, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub num_entities: usize,
    pub seed: u64,
    pub matrix: Matrix,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows
    }

    pub fn num_relations(&self) -> usize {
        self.matrix.rows - self.num_entities
    }

    #[inline]
    pub fn entity(&self, id: EntityId) -> &[f64] {
        debug_assert!(id.0 < self.num_entities);
        self.matrix.row(id.0)
    }

    #[inline]
    pub fn relation(&self, r: Relation) -> &[f64] {
        self.matrix.row(self.num_entities + r.index())
    }

    pub fn relation_row(&self, r: Relation) -> usize {
        self.num_entities + r.index()
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.0 < self.num_entities {
            Ok(())
        } else {
            Err(Error::UnknownEntity(id.0))
        }
    }

    fn normalize_entities(&mut self) {
        for i in 0..self.num_entities {
            let row = self.matrix.row_mut(i);
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    /// Rounds every entry through `f32`, so a save/load cycle is lossless.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.matrix.data {
            *x = *x as f32 as f64;
        }
    }

    /// One JSON header line, then little-endian `f32` rows.
    pub fn save(&self, path: &Path, fingerprint: &str) -> Result<()> {
        let header = EmbeddingHeader {
            rows: self.rows(),
            cols: self.dim(),
            seed: self.seed,
            num_entities: self.num_entities,
            fingerprint: fingerprint.to_string(),
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        for &x in &self.matrix.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, blob) = split_header::<EmbeddingHeader>(&bytes, path)?;
        if header.num_entities > header.rows {
            return Err(Error::artifact(path, "num_entities exceeds row count"));
        }
        let data = read_f32s(blob, header.rows * header.cols, path)?;
        Ok(EmbeddingTable {
            num_entities: header.num_entities,
            seed: header.seed,
            matrix: Matrix {
                rows: header.rows,
                cols: header.cols,
                data,
            },
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    rows: usize,
    cols: usize,
    seed: u64,
    num_entities: usize,
    fingerprint: String,
}

pub(crate) fn split_header<'a, H: for<'de> Deserialize<'de>>(bytes: &'a [u8], path: &Path) -> Result<(H, &'a [u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::artifact(path, "missing header line"))?;
    let header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::artifact(path, e.to_string()))?;
    Ok((header, &bytes[nl + 1..]))
}

pub(crate) fn read_f32s(blob: &[u8], expected: usize, path: &Path) -> Result<Vec<f64>> {
    if blob.len() != expected * 4 {
        return Err(Error::artifact(
            path,
            format!("expected {} bytes of data, found {}", expected * 4, blob.len()),
        ));
    }
    Ok(blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 400,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 100,
            negatives: 1,
            seed: 0,
        }
    }
}

impl TransEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("transe dimension must be positive".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("transe margin must be positive".into()));
        }
        if self.epochs == 0 || self.negatives == 0 {
            return Err(Error::Config("transe epochs and negatives must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("transe learning rate must be positive".into()));
        }
        Ok(())
    }
}

pub fn init_embeddings(num_entities: usize, num_relations: usize, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    if num_entities == 0 || num_relations == 0 {
        return Err(Error::Config("embedding table needs at least one entity and relation".into()));
    }
    let bound = 6.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = Matrix::from_fn(num_entities + num_relations, dim, |_, _| rng.gen_range(-bound..bound));
    let mut table = EmbeddingTable {
        num_entities,
        seed,
        matrix,
    };
    table.normalize_entities();
    Ok(table)
}

/// Row triple `(head, relation, tail)` in table coordinates.
pub type RowTriple = (usize, usize, usize);

fn check_rows(table: &EmbeddingTable, (h, r, t): RowTriple) -> Result<()> {
    for (row, is_entity) in [(h, true), (r, false), (t, true)] {
        let ok = if is_entity {
            row < table.num_entities
        } else {
            row >= table.num_entities && row < table.rows()
        };
        if !ok {
            return Err(Error::UnknownEntity(row));
        }
    }
    Ok(())
}

/// `‖x_h + x_r − x_t‖₂`
pub fn transe_score(table: &EmbeddingTable, head: EntityId, relation: Relation, tail: EntityId) -> Result<f64> {
    let rows = (head.0, table.num_entities + relation.index(), tail.0);
    check_rows(table, rows)?;
    Ok(row_score(table, rows))
}

pub(crate) fn row_score(table: &EmbeddingTable, (h, r, t): RowTriple) -> f64 {
    let m = &table.matrix;
    let (xh, xr, xt) = (m.row(h), m.row(r), m.row(t));
    xh.iter()
        .zip(xr)
        .zip(xt)
        .map(|((a, b), c)| (a + b - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Unit direction of `x_h + x_r − x_t`, i.e. the gradient of the score
/// w.r.t. `x_h` (and `x_r`; negated for `x_t`). Zero at the origin.
fn score_direction(table: &EmbeddingTable, (h, r, t): RowTriple) -> (f64, Vec<f64>) {
    let m = &table.matrix;
    let v: Vec<f64> = m
        .row(h)
        .iter()
        .zip(m.row(r))
        .zip(m.row(t))
        .map(|((a, b), c)| a + b - c)
        .collect();
    let n = norm(&v);
    if n > 0.0 {
        (n, v.into_iter().map(|x| x / n).collect())
    } else {
        (0.0, v)
    }
}

/// Hinge loss `max(0, γ + d(pos) − d(neg))` and its gradient, as a list of
/// `(row, dL/d row)` contributions (rows may repeat).
pub fn margin_loss_grad(
    table: &EmbeddingTable,
    positive: RowTriple,
    negative: RowTriple,
    margin: f64,
) -> (f64, Vec<(usize, Vec<f64>)>) {
    let (dp, up) = score_direction(table, positive);
    let (dn, un) = score_direction(table, negative);
    let loss = margin + dp - dn;
    if loss <= 0.0 {
        return (0.0, Vec::new());
    }
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let grads = vec![
        (positive.0, up.clone()),
        (positive.1, up.clone()),
        (positive.2, neg(&up)),
        (negative.0, neg(&un)),
        (negative.1, neg(&un)),
        (negative.2, un),
    ];
    (loss, grads)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransEReport {
    /// Sum of hinge losses seen during each epoch's SGD pass.
    pub epoch_losses: Vec<f64>,
}

/// Uniform head-or-tail corruption, resampled while it hits a true triple.
pub(crate) fn corrupt(g: &KnowledgeGraph, table: &EmbeddingTable, (h, r, t): RowTriple, rng: &mut impl Rng) -> RowTriple {
    let rel = Relation::from_index(r - table.num_entities).expect("relation row");
    let n = table.num_entities;
    let mut candidate = (h, r, t);
    for _ in 0..64 {
        let e = rng.gen_range(0..n);
        candidate = if rng.gen_bool(0.5) { (e, r, t) } else { (h, r, e) };
        if candidate != (h, r, t) && !g.contains(EntityId(candidate.0), rel, EntityId(candidate.2)) {
            break;
        }
    }
    candidate
}

pub fn positive_rows(g: &KnowledgeGraph) -> Vec<RowTriple> {
    let n = g.num_entities();
    g.triples()
        .map(|t| (t.head.0, n + t.relation.index(), t.tail.0))
        .collect()
}

pub fn train_transe(g: &KnowledgeGraph, config: &TransEConfig) -> Result<(EmbeddingTable, TransEReport)> {
    config.validate()?;
    if g.is_empty() {
        return Err(Error::Data("cannot train embeddings on an empty graph".into()));
    }
    let mut table = init_embeddings(g.num_entities(), Relation::COUNT, config.dim, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut positives = positive_rows(g);
    let mut report = TransEReport::default();
    for _ in 0..config.epochs {
        positives.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &pos in &positives {
            for _ in 0..config.negatives {
                let neg = corrupt(g, &table, pos, &mut rng);
                let (loss, grads) = margin_loss_grad(&table, pos, neg, config.margin);
                epoch_loss += loss;
                for (row, grad) in grads {
                    crate::linalg::axpy(-config.learning_rate, &grad, table.matrix.row_mut(row));
                }
            }
        }
        table.normalize_entities();
        report.epoch_losses.push(epoch_loss);
    }
    table.round_to_f32();
    Ok((table, report))
}
