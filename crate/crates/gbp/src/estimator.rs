//! Combination phase: assemble the estimate from the two halves, plus weight
//! schemes, error-budget planning, and embedding serialization.
//!
//! For every target row s and feature column k,
//!
//! ```text
//! P̂(s,k) = Σ_{ℓ=0}^{L} w_ℓ · d(s)^r · [ Q^(ℓ)(s,k) + Σ_{t=0}^{ℓ} Σ_u S^(ℓ−t)(s,u) · R^(t)(u,k) ]
//! ```
//!
//! The reserve part is exact and deterministic; the walk part replaces the
//! unknown transition rows (D^{−1}A)^{ℓ−t}(s,·) with their Monte-Carlo
//! estimates S^(ℓ−t), which makes P̂ unbiased for the exact propagation of
//! whatever residues the push phase left behind. Every product below touches
//! only stored nonzeros: S rows are at most n_r entries, residues are the
//! sparse leftovers of the push.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeSet};
use crate::push::PushState;
use crate::walks::WalkFrequencies;

const EMBEDDING_MAGIC: &[u8; 4] = b"GBPE";
const EMBEDDING_VERSION: u32 = 1;

/// Level-weight construction rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    /// w_ℓ = α(1−α)^ℓ, truncated at L and deliberately not renormalized.
    Ppr { alpha: f64 },
    /// w_L = 1, all others 0: pure L-step transition.
    LastHop,
    /// Arbitrary user weights, validated against Σ ≤ 1.
    Custom { weights: Vec<f64> },
}

/// Materialized weights w_0..w_L plus the rule they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub kind: WeightKind,
    weights: Vec<f64>,
}

impl WeightScheme {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Build the weight sequence for levels 0..=level_count.
pub fn make_weights(kind: &WeightKind, level_count: usize) -> Result<WeightScheme> {
    let weights = match kind {
        WeightKind::Ppr { alpha } => {
            if !(*alpha > 0.0 && *alpha < 1.0) {
                return Err(Error::validation(format!("ppr needs α in (0,1), got {alpha}")));
            }
            let mut w = Vec::with_capacity(level_count + 1);
            let mut current = *alpha;
            for _ in 0..=level_count {
                w.push(current);
                current *= 1.0 - alpha;
            }
            w
        }
        WeightKind::LastHop => {
            let mut w = vec![0.0; level_count + 1];
            w[level_count] = 1.0;
            w
        }
        WeightKind::Custom { weights } => {
            if weights.len() != level_count + 1 {
                return Err(Error::validation(format!(
                    "custom weights: need {} values for L={level_count}, got {}",
                    level_count + 1,
                    weights.len()
                )));
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::validation("custom weights must be finite"));
            }
            let sum: f64 = weights.iter().sum();
            if sum > 1.0 + 1e-12 {
                return Err(Error::validation(format!(
                    "custom weights sum to {sum} > 1"
                )));
            }
            weights.clone()
        }
    };
    Ok(WeightScheme { kind: kind.clone(), weights })
}

/// Everything the pipeline needs to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub level_count: usize,
    /// Convolution exponent r ∈ [0,1].
    pub conv_exponent: f64,
    pub weights: WeightScheme,
    /// Push threshold r_max.
    pub push_threshold: f64,
    /// Walks per target node n_r.
    pub walks_per_node: u32,
    pub seed: u64,
    pub targets: NodeSet,
    pub denormalize: bool,
}

impl PropagationConfig {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conv_exponent) {
            return Err(Error::validation(format!(
                "convolution exponent must be in [0,1], got {}",
                self.conv_exponent
            )));
        }
        if !(self.push_threshold > 0.0) || !self.push_threshold.is_finite() {
            return Err(Error::validation(format!(
                "push threshold must be positive, got {}",
                self.push_threshold
            )));
        }
        if self.weights.weights().len() != self.level_count + 1 {
            return Err(Error::validation("weight count does not match level count"));
        }
        self.targets.validate(g)
    }

    /// Canonical digest of the numeric configuration (paths and wall clocks
    /// excluded), embedded in output metadata and the run manifest.
    pub fn digest(&self, g: &Graph) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"gbp-config-v1");
        hasher.update((g.node_count() as u64).to_le_bytes());
        hasher.update((g.edge_count() as u64).to_le_bytes());
        hasher.update((self.level_count as u64).to_le_bytes());
        hasher.update(self.conv_exponent.to_le_bytes());
        hasher.update(self.push_threshold.to_le_bytes());
        hasher.update(self.walks_per_node.to_le_bytes());
        hasher.update(self.seed.to_le_bytes());
        hasher.update([self.denormalize as u8]);
        for w in self.weights.weights() {
            hasher.update(w.to_le_bytes());
        }
        for &t in self.targets.ids() {
            hasher.update(t.to_le_bytes());
        }
        format!("{:x}", hasher.finalize())
    }
}

/// Parameters derived from an error budget ε (Theorem-style planning with all
/// big-O constants fixed at 1; natural logarithm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlannedParameters {
    pub epsilon: f64,
    pub push_threshold: f64,
    pub walks_per_node: u32,
}

/// r_max = ε·√(d/(L·|V_t|·ln(nL))) and
/// n_r = ceil(r_max·(2εL/3 + 2·r_max·L²)·ln(nL)/ε²).
///
/// `d` is the self-looped average degree. Requires L ≥ 1 and n·L ≥ 2 (the
/// formulas divide by L and ln(nL)).
pub fn plan_parameters(
    g: &Graph,
    targets: &NodeSet,
    level_count: usize,
    epsilon: f64,
) -> Result<PlannedParameters> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::validation(format!("epsilon must be positive, got {epsilon}")));
    }
    if level_count == 0 {
        return Err(Error::validation("parameter planning needs L ≥ 1"));
    }
    if targets.is_empty() {
        return Err(Error::validation("parameter planning needs a non-empty target set"));
    }
    targets.validate(g)?;
    let n = g.node_count();
    if n * level_count < 2 {
        return Err(Error::validation("parameter planning needs n·L ≥ 2"));
    }
    let avg_degree = g.average_degree();
    let levels = level_count as f64;
    let log_nl = ((n * level_count) as f64).ln();
    let push_threshold =
        epsilon * (avg_degree / (levels * targets.len() as f64 * log_nl)).sqrt();
    let walks = (push_threshold
        * (2.0 * epsilon * levels / 3.0 + 2.0 * push_threshold * levels * levels)
        * log_nl
        / (epsilon * epsilon))
        .ceil();
    if !(walks >= 0.0) || walks > u32::MAX as f64 {
        return Err(Error::validation(format!("planned walk count {walks} out of range")));
    }
    Ok(PlannedParameters {
        epsilon,
        push_threshold,
        walks_per_node: walks as u32,
    })
}

/// Metadata block serialized with every embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub config_digest: String,
    pub denormalized: bool,
    pub column_norms: Vec<f64>,
    pub level_count: usize,
    pub conv_exponent: f64,
    pub push_threshold: f64,
    pub walks_per_node: u32,
    pub seed: u64,
    pub weights: Vec<f64>,
}

/// The embedding rows for the target set, row-major, with provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    row_ids: Vec<u64>,
    cols: usize,
    values: Vec<f64>,
    meta: EmbeddingMeta,
}

impl EmbeddingMatrix {
    pub fn new(row_ids: Vec<u64>, cols: usize, values: Vec<f64>, meta: EmbeddingMeta) -> Result<Self> {
        if values.len() != row_ids.len() * cols {
            return Err(Error::validation("embedding size mismatch"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding contains non-finite values"));
        }
        Ok(EmbeddingMatrix { row_ids, cols, values, meta })
    }

    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.values[index * self.cols..(index + 1) * self.cols]
    }

    pub fn meta(&self) -> &EmbeddingMeta {
        &self.meta
    }

    /// Replace internal row ids with external labels (the CLI joins outputs
    /// back onto the input id space before writing).
    pub fn relabel_rows(&mut self, g: &Graph) {
        for id in &mut self.row_ids {
            *id = g.label_of(*id as u32);
        }
    }
}

/// Assemble P̂ from a completed push state and sampled walk frequencies.
pub fn combine(
    push_state: &PushState,
    walk_freqs: &WalkFrequencies,
    g: &Graph,
    cfg: &PropagationConfig,
) -> Result<EmbeddingMatrix> {
    cfg.validate(g)?;
    let level_count = cfg.level_count;
    let cols = push_state.cols();
    if push_state.level_count() != level_count || walk_freqs.level_count() != level_count {
        return Err(Error::validation(format!(
            "phase mismatch: push L={}, walks L={}, config L={level_count}",
            push_state.level_count(),
            walk_freqs.level_count()
        )));
    }
    if push_state.node_count() != g.node_count() {
        return Err(Error::validation("push state was built on a different graph"));
    }
    if push_state.r_max() != cfg.push_threshold {
        return Err(Error::validation("push state r_max differs from config"));
    }
    if walk_freqs.walks_per_node() != cfg.walks_per_node
        || walk_freqs.seed() != cfg.seed
        || walk_freqs.targets() != &cfg.targets
    {
        return Err(Error::validation("walk frequencies do not match config"));
    }

    let targets = &cfg.targets;
    let weights = cfg.weights.weights();
    let d_r = g.degree_power(cfg.conv_exponent);
    let denom = walk_freqs.denominator();

    // Residues by row: level t → node u → its nonzero (column, value) pairs.
    let residue_rows: Vec<HashMap<u32, Vec<(usize, f64)>>> = (0..=level_count)
        .map(|level| {
            let mut map: HashMap<u32, Vec<(usize, f64)>> = HashMap::new();
            for col in 0..cols {
                for &(u, v) in push_state.residue_entries(level, col) {
                    map.entry(u).or_default().push((col, v));
                }
            }
            map
        })
        .collect();

    // Reserve entries restricted to target rows, densified per level.
    let mut target_pos = vec![u32::MAX; g.node_count()];
    for (i, &s) in targets.ids().iter().enumerate() {
        target_pos[s as usize] = i as u32;
    }
    let reserve_rows: Vec<Vec<f64>> = (0..=level_count)
        .map(|level| {
            let mut dense = vec![0.0; targets.len() * cols];
            for col in 0..cols {
                for &(u, v) in push_state.reserve_entries(level, col) {
                    let pos = target_pos[u as usize];
                    if pos != u32::MAX {
                        dense[pos as usize * cols + col] = v;
                    }
                }
            }
            dense
        })
        .collect();

    let norms = push_state.column_norms();
    let values: Vec<f64> = targets
        .ids()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(row_idx, &s)| {
            let mut row = vec![0.0; cols];
            let mut level_acc = vec![0.0; cols];
            for (level, &w) in weights.iter().enumerate().take(level_count + 1) {
                if w == 0.0 {
                    continue;
                }
                level_acc.copy_from_slice(
                    &reserve_rows[level][row_idx * cols..(row_idx + 1) * cols],
                );
                for t in 0..=level {
                    let walk_level = level - t;
                    for &(u, count) in walk_freqs.counts(row_idx, walk_level) {
                        if let Some(entries) = residue_rows[t].get(&u) {
                            let frac = count as f64 / denom;
                            for &(col, v) in entries {
                                level_acc[col] += frac * v;
                            }
                        }
                    }
                }
                for (acc, slot) in level_acc.iter().zip(row.iter_mut()) {
                    *slot += w * acc;
                }
            }
            let scale = d_r[s as usize];
            for (col, slot) in row.iter_mut().enumerate() {
                *slot *= scale;
                if cfg.denormalize {
                    *slot *= norms[col];
                }
            }
            row
        })
        .collect();

    let meta = EmbeddingMeta {
        config_digest: cfg.digest(g),
        denormalized: cfg.denormalize,
        column_norms: norms.to_vec(),
        level_count,
        conv_exponent: cfg.conv_exponent,
        push_threshold: cfg.push_threshold,
        walks_per_node: cfg.walks_per_node,
        seed: cfg.seed,
        weights: weights.to_vec(),
    };
    EmbeddingMatrix::new(
        targets.ids().iter().map(|&s| s as u64).collect(),
        cols,
        values,
        meta,
    )
}

/// Binary embedding writer. Layout (little-endian throughout): magic "GBPE",
/// version u32, row count u64, col count u64, row ids (u64 each), values
/// (f64, row-major), then a u64 length-prefixed JSON metadata blob.
/// Bit-exact round trip; zero-row embeddings are rejected.
pub fn write_embedding<W: Write>(e: &EmbeddingMatrix, mut sink: W) -> Result<()> {
    if e.rows() == 0 {
        return Err(Error::validation("refusing to write an embedding with zero rows"));
    }
    sink.write_all(EMBEDDING_MAGIC)?;
    sink.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    sink.write_all(&(e.rows() as u64).to_le_bytes())?;
    sink.write_all(&(e.cols() as u64).to_le_bytes())?;
    for &id in e.row_ids() {
        sink.write_all(&id.to_le_bytes())?;
    }
    for &v in e.values() {
        sink.write_all(&v.to_le_bytes())?;
    }
    let meta = serde_json::to_vec(e.meta())
        .map_err(|err| Error::validation(format!("metadata serialization failed: {err}")))?;
    sink.write_all(&(meta.len() as u64).to_le_bytes())?;
    sink.write_all(&meta)?;
    Ok(())
}

fn read_exact_or_format<R: Read>(src: &mut R, buf: &mut [u8]) -> Result<()> {
    src.read_exact(buf).map_err(|_| Error::Format("truncated embedding stream".into()))
}

pub fn read_embedding<R: Read>(mut src: R) -> Result<EmbeddingMatrix> {
    let mut magic = [0u8; 4];
    read_exact_or_format(&mut src, &mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"GBPE\"")));
    }
    let mut buf4 = [0u8; 4];
    read_exact_or_format(&mut src, &mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported GBPE version {version}")));
    }
    let mut buf8 = [0u8; 8];
    read_exact_or_format(&mut src, &mut buf8)?;
    let rows = u64::from_le_bytes(buf8) as usize;
    read_exact_or_format(&mut src, &mut buf8)?;
    let cols = u64::from_le_bytes(buf8) as usize;
    if rows == 0 {
        return Err(Error::Format("embedding declares zero rows".into()));
    }
    let mut row_ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        read_exact_or_format(&mut src, &mut buf8)?;
        row_ids.push(u64::from_le_bytes(buf8));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        read_exact_or_format(&mut src, &mut buf8)?;
        values.push(f64::from_le_bytes(buf8));
    }
    read_exact_or_format(&mut src, &mut buf8)?;
    let meta_len = u64::from_le_bytes(buf8) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact_or_format(&mut src, &mut meta_bytes)?;
    let meta: EmbeddingMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|err| Error::Format(format!("metadata blob unreadable: {err}")))?;
    let mut probe = [0u8; 1];
    if src.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after embedding".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("embedding contains non-finite values".into()));
    }
    EmbeddingMatrix::new(row_ids, cols, values, meta)
}

/// TSV export: one line per row, row id first, then the values.
pub fn write_embedding_tsv<W: Write>(e: &EmbeddingMatrix, mut sink: W) -> Result<()> {
    if e.rows() == 0 {
        return Err(Error::validation("refusing to write an embedding with zero rows"));
    }
    for (i, &id) in e.row_ids().iter().enumerate() {
        write!(sink, "{id}")?;
        for v in e.row(i) {
            write!(sink, "\t{v}")?;
        }
        writeln!(sink)?;
    }
    Ok(())
}

/// TSV import (row ids and values only; metadata is carried by `meta`).
pub fn read_embedding_tsv<R: BufRead>(reader: R, meta: EmbeddingMeta) -> Result<EmbeddingMatrix> {
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    let mut cols: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let id: u64 = it
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(lineno + 1, "bad row id"))?;
        row_ids.push(id);
        let mut count = 0usize;
        for tok in it {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(lineno + 1, format!("bad value {tok:?}")))?;
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(f) if f != count => {
                return Err(Error::parse(lineno + 1, "ragged embedding row"))
            }
            _ => {}
        }
    }
    EmbeddingMatrix::new(row_ids, cols.unwrap_or(0), values, meta)
}
