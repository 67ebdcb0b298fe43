//! Deterministic reverse push: level-by-level distribution of residue mass.
//!
//! The seed matrix enters as residue at level 0. One sweep per level ℓ =
//! 0..L−1: every entry with |R^(ℓ)(u,k)| > r_max (strictly) is *pushed* —
//! each neighbor v ∈ N(u) receives R^(ℓ)(u,k)/d(v) at level ℓ+1 — and the
//! entry itself moves to the reserve Q^(ℓ). Entries at or below the threshold
//! stay behind as residue. After the last sweep, everything at level L
//! transfers to Q^(L) unconditionally.
//!
//! One sweep per level suffices because pushes at level ℓ write only to level
//! ℓ+1: once the sweep of level ℓ−1 is done, level ℓ's residues are final.
//! The same fact makes the result independent of the order entries are
//! processed within a level, which the tests exercise by running sweeps both
//! ascending and descending.
//!
//! The quantity the estimator consumes is conserved at every step: pushing an
//! entry moves its value to Q and redistributes it to level ℓ+1 in exactly
//! the proportions of one application of (D^{−1}A), so
//!
//! ```text
//! T^(ℓ) = D^r · ( Q^(ℓ) + Σ_{t=0}^{ℓ} (D^{−1}A)^{ℓ−t} R^(t) )
//! ```
//!
//! holds for *any* intermediate state, including runs interrupted mid-sweep
//! via [`push_with_budget`]. That identity is the correctness anchor of the
//! whole crate (the dense evaluator lives in [`crate::oracle`]).
//!
//! Columns never interact, so the column is both the storage unit (sparse
//! per-column entry lists) and the parallel decomposition unit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::NormalizedResidueSeed;
use crate::graph::{Graph, NodeId};

/// Reserve and residue entry lists per level and feature column, plus the
/// operation counters used to verify the cost model.
#[derive(Debug, Clone)]
pub struct PushState {
    level_count: usize,
    r_max: f64,
    node_count: usize,
    cols: usize,
    /// reserve[level][col] — sorted by node id.
    reserve: Vec<Vec<Vec<(NodeId, f64)>>>,
    /// residue[level][col] — sorted by node id.
    residue: Vec<Vec<Vec<(NodeId, f64)>>>,
    /// Neighbor-update operations performed (each push costs d(u) of these).
    push_count: u64,
    /// Entries that exceeded the threshold and were pushed.
    exceeded_count: u64,
    /// Column norms carried over from the seed for later denormalization.
    column_norms: Vec<f64>,
    completed: bool,
}

impl PushState {
    pub fn level_count(&self) -> usize {
        self.level_count
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn push_count(&self) -> u64 {
        self.push_count
    }

    pub fn exceeded_count(&self) -> u64 {
        self.exceeded_count
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.column_norms
    }

    /// False when a push budget ran out before the sweeps finished.
    pub fn completed(&self) -> bool {
        self.completed
    }

    /// Q^(level) entries of one column, sorted by node id.
    pub fn reserve_entries(&self, level: usize, col: usize) -> &[(NodeId, f64)] {
        &self.reserve[level][col]
    }

    /// R^(level) entries of one column, sorted by node id.
    pub fn residue_entries(&self, level: usize, col: usize) -> &[(NodeId, f64)] {
        &self.residue[level][col]
    }

    /// Dense row-major n×F copy of Q^(level), for tests and the oracle side.
    pub fn reserve_dense(&self, level: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count * self.cols];
        for (col, entries) in self.reserve[level].iter().enumerate() {
            for &(u, v) in entries {
                out[u as usize * self.cols + col] = v;
            }
        }
        out
    }

    /// Dense row-major n×F copy of R^(level).
    pub fn residue_dense(&self, level: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count * self.cols];
        for (col, entries) in self.residue[level].iter().enumerate() {
            for &(u, v) in entries {
                out[u as usize * self.cols + col] = v;
            }
        }
        out
    }
}

struct ColumnOutcome {
    reserve: Vec<Vec<(NodeId, f64)>>,
    residue: Vec<Vec<(NodeId, f64)>>,
    push_count: u64,
    exceeded_count: u64,
    completed: bool,
}

fn sweep_column(
    g: &Graph,
    seed: &NormalizedResidueSeed,
    col: usize,
    level_count: usize,
    r_max: f64,
    budget: Option<u64>,
    descending: bool,
) -> ColumnOutcome {
    let n = g.node_count();
    let cols = seed.cols();
    let mut reserve: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); level_count + 1];
    let mut residue: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); level_count + 1];
    let mut push_count = 0u64;
    let mut exceeded_count = 0u64;
    let mut remaining = budget;

    let mut current: Vec<(NodeId, f64)> = (0..n)
        .filter_map(|u| {
            let v = seed.values()[u * cols + col];
            (v != 0.0).then_some((u as NodeId, v))
        })
        .collect();

    let mut next_vals = vec![0.0f64; n];
    let mut touched: Vec<NodeId> = Vec::new();
    let mut in_next = vec![false; n];
    let mut interrupted = false;

    for level in 0..level_count {
        let mut processed = 0usize;
        let mut cut: Option<usize> = None;
        for step in 0..current.len() {
            let i = if descending { current.len() - 1 - step } else { step };
            let (u, val) = current[i];
            if val.abs() > r_max {
                if let Some(b) = remaining.as_mut() {
                    if *b == 0 {
                        cut = Some(step);
                        break;
                    }
                    *b -= 1;
                }
                exceeded_count += 1;
                for &v in g.neighbors(u) {
                    if !in_next[v as usize] {
                        in_next[v as usize] = true;
                        touched.push(v);
                    }
                    next_vals[v as usize] += val / g.degree(v) as f64;
                    push_count += 1;
                }
                reserve[level].push((u, val));
            } else if val != 0.0 {
                residue[level].push((u, val));
            }
            processed += 1;
        }

        if let Some(cut) = cut {
            debug_assert_eq!(processed, cut);
            let unprocessed: &[(NodeId, f64)] = if descending {
                &current[..current.len() - cut]
            } else {
                &current[cut..]
            };
            residue[level].extend(unprocessed.iter().copied().filter(|e| e.1 != 0.0));
            residue[level + 1] = touched
                .iter()
                .map(|&v| (v, next_vals[v as usize]))
                .filter(|e| e.1 != 0.0)
                .collect();
            interrupted = true;
            break;
        }

        touched.sort_unstable();
        current = touched
            .iter()
            .map(|&v| (v, next_vals[v as usize]))
            .filter(|e| e.1 != 0.0)
            .collect();
        for &v in &touched {
            next_vals[v as usize] = 0.0;
            in_next[v as usize] = false;
        }
        touched.clear();
    }

    if !interrupted {
        // Q^(L) ← R^(L): whatever reached the last level settles as reserve.
        reserve[level_count] = current;
    }
    for level_entries in reserve.iter_mut().chain(residue.iter_mut()) {
        level_entries.sort_unstable_by_key(|e| e.0);
    }
    ColumnOutcome { reserve, residue, push_count, exceeded_count, completed: !interrupted }
}

fn run_push(
    g: &Graph,
    seed: &NormalizedResidueSeed,
    level_count: usize,
    r_max: f64,
    budget: Option<u64>,
    descending: bool,
) -> Result<PushState> {
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(Error::validation(format!("r_max must be positive and finite, got {r_max}")));
    }
    if seed.rows() != g.node_count() {
        return Err(Error::validation(format!(
            "seed rows ({}) != graph nodes ({})",
            seed.rows(),
            g.node_count()
        )));
    }
    let cols = seed.cols();
    let outcomes: Vec<ColumnOutcome> = (0..cols)
        .into_par_iter()
        .map(|col| sweep_column(g, seed, col, level_count, r_max, budget, descending))
        .collect();

    let mut reserve = vec![vec![Vec::new(); cols]; level_count + 1];
    let mut residue = vec![vec![Vec::new(); cols]; level_count + 1];
    let mut push_count = 0u64;
    let mut exceeded_count = 0u64;
    let mut completed = true;
    for (col, outcome) in outcomes.into_iter().enumerate() {
        for (level, entries) in outcome.reserve.into_iter().enumerate() {
            reserve[level][col] = entries;
        }
        for (level, entries) in outcome.residue.into_iter().enumerate() {
            residue[level][col] = entries;
        }
        push_count += outcome.push_count;
        exceeded_count += outcome.exceeded_count;
        completed &= outcome.completed;
    }
    Ok(PushState {
        level_count,
        r_max,
        node_count: g.node_count(),
        cols,
        reserve,
        residue,
        push_count,
        exceeded_count,
        column_norms: seed.column_norms().to_vec(),
        completed,
    })
}

/// Run the full reverse push to completion.
pub fn push(
    g: &Graph,
    seed: &NormalizedResidueSeed,
    level_count: usize,
    r_max: f64,
) -> Result<PushState> {
    run_push(g, seed, level_count, r_max, None, false)
}

/// Reverse push that stops (per column) after `budget` threshold-exceeding
/// entries have been pushed, leaving a valid intermediate state. Used to
/// exercise the conservation identity at arbitrary interruption points and
/// exposed for the verification CLI.
pub fn push_with_budget(
    g: &Graph,
    seed: &NormalizedResidueSeed,
    level_count: usize,
    r_max: f64,
    budget: u64,
) -> Result<PushState> {
    run_push(g, seed, level_count, r_max, Some(budget), false)
}

#[cfg(test)]
pub(crate) fn push_descending(
    g: &Graph,
    seed: &NormalizedResidueSeed,
    level_count: usize,
    r_max: f64,
) -> Result<PushState> {
    run_push(g, seed, level_count, r_max, None, true)
}

/// Cap on threshold-exceeding entries across all levels and columns for a
/// non-negative normalized seed: each (level, column) carries total mass ≤ 1,
/// so at most 1/r_max entries can exceed r_max — ceil(L·F/r_max) overall.
/// Each exceeding entry costs d(u) ≤ max-degree neighbor updates, giving the
/// corollary `push_count ≤ bound × max_degree` asserted in tests.
pub fn push_count_bound(level_count: usize, cols: usize, r_max: f64) -> u64 {
    ((level_count * cols) as f64 / r_max).ceil() as u64
}
