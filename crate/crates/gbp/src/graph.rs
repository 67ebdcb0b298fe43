//! Undirected self-looped graphs in compressed sparse row form.
//!
//! Input is a plain edge list ("u v" per line, `#` comments). The loader
//! remaps arbitrary non-negative integer labels to contiguous ids `0..n` in
//! first-seen order (the mapping is kept so external label/target files can be
//! joined back on), symmetrizes, collapses duplicates, and gives every node a
//! self-loop. The forced self-loop is load-bearing: every kernel downstream
//! divides by `d(u)`, and random walks must never strand.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

pub type NodeId = u32;

const CACHE_MAGIC: &[u8; 4] = b"GBPG";
const CACHE_VERSION: u32 = 1;

/// Immutable CSR graph. Safe to share read-only across any number of workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    degrees: Vec<u32>,
    /// internal id -> original label from the edge list.
    labels: Vec<u64>,
    /// original label -> internal id.
    index: HashMap<u64, NodeId>,
}

impl Graph {
    /// Build from labeled undirected edges. Labels are remapped to `0..n` in
    /// first-seen order; edges are symmetrized and deduplicated; every node
    /// receives a self-loop whether or not the input listed one.
    pub fn from_labeled_edges(edges: &[(u64, u64)]) -> Result<Graph> {
        if edges.is_empty() {
            return Err(Error::validation("empty edge list"));
        }
        let mut index: HashMap<u64, NodeId> = HashMap::new();
        let mut labels: Vec<u64> = Vec::new();
        let intern = |label: u64, labels: &mut Vec<u64>, index: &mut HashMap<u64, NodeId>| {
            *index.entry(label).or_insert_with(|| {
                labels.push(label);
                (labels.len() - 1) as NodeId
            })
        };
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            let u = intern(a, &mut labels, &mut index);
            let v = intern(b, &mut labels, &mut index);
            pairs.push((u, v));
        }
        let n = labels.len();

        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for u in 0..n as NodeId {
            adj[u as usize].push(u); // forced self-loop
        }
        for (u, v) in pairs {
            if u != v {
                adj[u as usize].push(v);
                adj[v as usize].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut degrees = Vec::with_capacity(n);
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            degrees.push(list.len() as u32);
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Graph { offsets, neighbors, degrees, labels, index })
    }

    pub fn node_count(&self) -> usize {
        self.degrees.len()
    }

    /// Undirected edge count: each non-loop edge once, each self-loop once.
    /// Satisfies Σ_u d(u) = 2·(non-loop edges) + n.
    pub fn edge_count(&self) -> usize {
        (self.neighbors.len() + self.node_count()) / 2
    }

    #[inline]
    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.neighbors[self.offsets[u as usize]..self.offsets[u as usize + 1]]
    }

    #[inline]
    pub fn degree(&self, u: NodeId) -> u32 {
        self.degrees[u as usize]
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn max_degree(&self) -> u32 {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    /// Average degree over the self-looped graph, Σ_u d(u) / n. This is the
    /// `d` used by the parameter planner; the convention (loops counted) is
    /// fixed here once.
    pub fn average_degree(&self) -> f64 {
        self.neighbors.len() as f64 / self.node_count() as f64
    }

    /// Original label of an internal id.
    pub fn label_of(&self, u: NodeId) -> u64 {
        self.labels[u as usize]
    }

    /// Internal id for an original label, if the node exists.
    pub fn resolve_label(&self, label: u64) -> Option<NodeId> {
        self.index.get(&label).copied()
    }

    /// `d(u)^exponent` for every node. The three exponents the estimator and
    /// oracle actually share (0, 1, 0.5-ish via sqrt) are special-cased so
    /// both sides of every comparison compute bit-identical diagonals.
    pub fn degree_power(&self, exponent: f64) -> Vec<f64> {
        self.degrees
            .iter()
            .map(|&d| {
                let d = d as f64;
                if exponent == 0.0 {
                    1.0
                } else if exponent == 1.0 {
                    d
                } else if exponent == -1.0 {
                    1.0 / d
                } else if exponent == 0.5 {
                    d.sqrt()
                } else if exponent == -0.5 {
                    1.0 / d.sqrt()
                } else {
                    d.powf(exponent)
                }
            })
            .collect()
    }
}

/// Parse an edge-list text stream. Lines: "u v" (whitespace separated,
/// non-negative integers); `#`-prefixed and blank lines are skipped.
pub fn load_edge_list<R: BufRead>(reader: R) -> Result<Graph> {
    let mut edges: Vec<(u64, u64)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let a = it.next();
        let b = it.next();
        let extra = it.next();
        match (a, b, extra) {
            (Some(a), Some(b), None) => {
                let parse = |tok: &str| {
                    tok.parse::<u64>().map_err(|_| {
                        Error::parse(lineno + 1, format!("expected node id, got {tok:?}"))
                    })
                };
                edges.push((parse(a)?, parse(b)?));
            }
            _ => {
                return Err(Error::parse(
                    lineno + 1,
                    format!("expected \"u v\", got {line:?}"),
                ))
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::validation("empty edge list"));
    }
    Graph::from_labeled_edges(&edges)
}

/// Write the graph as an edge list over the original node labels, such that
/// reloading reproduces the graph exactly (same ids, same labels, same
/// adjacency).
///
/// Reloading assigns ids in first-seen order, so lines are emitted in
/// node-introduction order: each non-loop edge appears once, attached to its
/// larger internal endpoint, and a node with no lower-id neighbor is
/// introduced by a "k k" line (which the loader collapses into the forced
/// self-loop). This also keeps isolated nodes alive through the round trip.
pub fn write_edge_list<W: Write>(g: &Graph, mut sink: W) -> Result<()> {
    for k in 0..g.node_count() as NodeId {
        let lower: Vec<NodeId> =
            g.neighbors(k).iter().copied().filter(|&v| v < k).collect();
        let lk = g.label_of(k);
        if lower.is_empty() {
            writeln!(sink, "{lk} {lk}")?;
        } else {
            for v in lower {
                writeln!(sink, "{} {lk}", g.label_of(v))?;
            }
        }
    }
    Ok(())
}

/// Binary cache writer. Layout (all integers little-endian): magic "GBPG",
/// version u32, n u64, m u64, offsets (n+1)×u64, neighbors ×u64, then the n
/// original node labels ×u64 so the id-remap sidecar survives the cache.
pub fn save_cache<W: Write>(g: &Graph, mut sink: W) -> Result<()> {
    sink.write_all(CACHE_MAGIC)?;
    sink.write_all(&CACHE_VERSION.to_le_bytes())?;
    sink.write_all(&(g.node_count() as u64).to_le_bytes())?;
    sink.write_all(&(g.edge_count() as u64).to_le_bytes())?;
    for &off in &g.offsets {
        sink.write_all(&(off as u64).to_le_bytes())?;
    }
    for &v in &g.neighbors {
        sink.write_all(&(v as u64).to_le_bytes())?;
    }
    for &label in &g.labels {
        sink.write_all(&label.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(src: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    src.read_exact(&mut buf).map_err(|_| Error::Format("truncated stream".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(src: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    src.read_exact(&mut buf).map_err(|_| Error::Format("truncated stream".into()))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn load_cache<R: Read>(mut src: R) -> Result<Graph> {
    let mut magic = [0u8; 4];
    src.read_exact(&mut magic).map_err(|_| Error::Format("truncated stream".into()))?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"GBPG\"")));
    }
    let version = read_u32(&mut src)?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported GBPG version {version}")));
    }
    let n = read_u64(&mut src)? as usize;
    let m = read_u64(&mut src)? as usize;
    let mut offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        offsets.push(read_u64(&mut src)? as usize);
    }
    let total = *offsets.last().unwrap_or(&0);
    let mut neighbors = Vec::with_capacity(total);
    for _ in 0..total {
        neighbors.push(read_u64(&mut src)? as NodeId);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(read_u64(&mut src)?);
    }
    let degrees: Vec<u32> =
        (0..n).map(|u| (offsets[u + 1] - offsets[u]) as u32).collect();
    let index: HashMap<u64, NodeId> =
        labels.iter().enumerate().map(|(i, &l)| (l, i as NodeId)).collect();
    let g = Graph { offsets, neighbors, degrees, labels, index };
    if g.edge_count() != m {
        return Err(Error::Format(format!(
            "edge count mismatch: header says {m}, adjacency has {}",
            g.edge_count()
        )));
    }
    for u in 0..n as NodeId {
        if g.degree(u) == 0 || !g.neighbors(u).contains(&u) {
            return Err(Error::Format(format!("node {u} lost its self-loop in cache")));
        }
    }
    Ok(g)
}

/// Sorted, deduplicated node-id set (the target set, usually called V_t).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    ids: Vec<NodeId>,
}

impl NodeSet {
    pub fn new(mut ids: Vec<NodeId>) -> NodeSet {
        ids.sort_unstable();
        ids.dedup();
        NodeSet { ids }
    }

    /// All nodes of the graph — the "targets = all" case.
    pub fn all(g: &Graph) -> NodeSet {
        NodeSet { ids: (0..g.node_count() as NodeId).collect() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.ids.binary_search(&u).is_ok()
    }

    /// Row index of `u` inside this set, if present.
    pub fn position(&self, u: NodeId) -> Option<usize> {
        self.ids.binary_search(&u).ok()
    }

    /// Fail unless every id is a node of `g`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        if let Some(&last) = self.ids.last() {
            if (last as usize) >= g.node_count() {
                return Err(Error::validation(format!(
                    "target id {last} out of range (graph has {} nodes)",
                    g.node_count()
                )));
            }
        }
        Ok(())
    }
}
