//! Exact dense reference: T^(ℓ) = (D^{r−1} A D^{−r})^ℓ X and P = Σ_ℓ w_ℓ T^(ℓ).
//!
//! This is the ground truth for every statistical and invariant test in the
//! crate, so it is written for transparency, not speed: plain sparse-row
//! application of the propagation operator with Kahan-compensated sums,
//! single-threaded, and capped at 10 000 nodes.
//!
//! Two kernels live here and are deliberately distinct:
//!
//! * [`exact_propagate`] applies `D^{r−1} A D^{−r}` to a matrix:
//!   out(v,k) = d(v)^{r−1} Σ_{u∈N(v)} d(u)^{−r} · in(u,k).
//! * [`exact_transition_rows`] iterates row vectors of `(D^{−1}A)^ℓ`:
//!   row'(v) = Σ_{u∈N(v)} row(u)/d(u).
//!
//! They are linked by the identity `(D^{r−1}AD^{−r})^ℓ = D^r (D^{−1}A)^ℓ D^{−r}`,
//! which the test suite checks numerically — a direction or normalization slip
//! in either kernel breaks that test.

use crate::error::{Error, Result};
use crate::features::NormalizedResidueSeed;
use crate::graph::{Graph, NodeSet};
use crate::push::PushState;

/// Dense evaluation is quadratic-ish in memory and meant for tests only.
pub const ORACLE_NODE_CAP: usize = 10_000;

/// Kahan–Babuška compensated accumulator; keeps the dense reference honest to
/// near machine precision even on adversarial cancellation patterns.
#[derive(Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// All levels T^(0..L) plus the weighted sum P, with the config echoed back.
#[derive(Debug, Clone)]
pub struct DensePropagation {
    rows: usize,
    cols: usize,
    pub level_count: usize,
    pub conv_exponent: f64,
    pub weights: Vec<f64>,
    levels: Vec<Vec<f64>>,
    combined: Vec<f64>,
}

impl DensePropagation {
    /// T^(ℓ) as a row-major rows×cols slice.
    pub fn level(&self, level: usize) -> &[f64] {
        &self.levels[level]
    }

    /// P = Σ_ℓ w_ℓ T^(ℓ), row-major.
    pub fn combined(&self) -> &[f64] {
        &self.combined
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

fn check_cap(g: &Graph) -> Result<()> {
    if g.node_count() > ORACLE_NODE_CAP {
        return Err(Error::validation(format!(
            "oracle is a test-scale tool: {} nodes exceeds cap {ORACLE_NODE_CAP}",
            g.node_count()
        )));
    }
    Ok(())
}

/// One application of `D^{−1}A`: out(v,k) = (Σ_{u∈N(v)} in(u,k)) / d(v).
///
/// Exposed because the push-phase invariants are phrased through powers of
/// this operator; the Lemma-2 evaluator below and several tests reuse it.
pub fn transition_apply(g: &Graph, input: &[f64], cols: usize) -> Vec<f64> {
    let n = g.node_count();
    debug_assert_eq!(input.len(), n * cols);
    let mut out = vec![0.0; n * cols];
    for v in 0..n {
        let dv = g.degree(v as u32) as f64;
        for k in 0..cols {
            let mut acc = KahanSum::default();
            for &u in g.neighbors(v as u32) {
                acc.add(input[u as usize * cols + k]);
            }
            out[v * cols + k] = acc.value() / dv;
        }
    }
    out
}

/// Exact T^(ℓ) = (D^{r−1}AD^{−r})^ℓ X for ℓ = 0..L and P = Σ w_ℓ T^(ℓ).
///
/// `x` is row-major with `cols` columns and one row per node; it may be the
/// raw feature matrix or the normalized seed — the oracle does not care.
pub fn exact_propagate(
    g: &Graph,
    x: &[f64],
    cols: usize,
    level_count: usize,
    conv_exponent: f64,
    weights: &[f64],
) -> Result<DensePropagation> {
    check_cap(g)?;
    let n = g.node_count();
    if x.len() != n * cols {
        return Err(Error::validation(format!(
            "oracle input size {} != n×F = {}",
            x.len(),
            n * cols
        )));
    }
    if weights.len() != level_count + 1 {
        return Err(Error::validation(format!(
            "need {} weights for L={level_count}, got {}",
            level_count + 1,
            weights.len()
        )));
    }
    let d_rm1 = g.degree_power(conv_exponent - 1.0);
    let d_mr = g.degree_power(-conv_exponent);

    let mut levels = Vec::with_capacity(level_count + 1);
    levels.push(x.to_vec());
    for _ in 0..level_count {
        let prev = levels.last().unwrap();
        let mut next = vec![0.0; n * cols];
        for v in 0..n {
            for k in 0..cols {
                let mut acc = KahanSum::default();
                for &u in g.neighbors(v as u32) {
                    acc.add(d_mr[u as usize] * prev[u as usize * cols + k]);
                }
                next[v * cols + k] = d_rm1[v] * acc.value();
            }
        }
        levels.push(next);
    }

    let mut combined = vec![0.0; n * cols];
    for i in 0..n * cols {
        let mut acc = KahanSum::default();
        for (level, t) in levels.iter().enumerate() {
            acc.add(weights[level] * t[i]);
        }
        combined[i] = acc.value();
    }
    Ok(DensePropagation {
        rows: n,
        cols,
        level_count,
        conv_exponent,
        weights: weights.to_vec(),
        levels,
        combined,
    })
}

/// Exact rows of `(D^{−1}A)^ℓ` for each target node, ℓ = 0..L.
/// Indexing: `result[level][target_index]` is a dense length-n row.
pub fn exact_transition_rows(
    g: &Graph,
    targets: &NodeSet,
    level_count: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_cap(g)?;
    targets.validate(g)?;
    let n = g.node_count();
    let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(level_count + 1);
    let mut current: Vec<Vec<f64>> = targets
        .ids()
        .iter()
        .map(|&s| {
            let mut row = vec![0.0; n];
            row[s as usize] = 1.0;
            row
        })
        .collect();
    out.push(current.clone());
    for _ in 0..level_count {
        let next: Vec<Vec<f64>> = current
            .iter()
            .map(|row| {
                // row' = row · D^{−1}A, i.e. row'(v) = Σ_{u∈N(v)} row(u)/d(u)
                let mut next_row = vec![0.0; n];
                for (v, slot) in next_row.iter_mut().enumerate() {
                    let mut acc = KahanSum::default();
                    for &u in g.neighbors(v as u32) {
                        acc.add(row[u as usize] / g.degree(u) as f64);
                    }
                    *slot = acc.value();
                }
                next_row
            })
            .collect();
        out.push(next.clone());
        current = next;
    }
    Ok(out)
}

/// Max-abs residual of the push-phase conservation identity, evaluated
/// densely over every level:
///
/// ```text
/// T^(ℓ) = D^r · ( Q^(ℓ) + Σ_{t=0}^{ℓ} (D^{−1}A)^{ℓ−t} R^(t) ),
/// T^(ℓ) = D^r (D^{−1}A)^ℓ · seed.
/// ```
///
/// The identity holds exactly (in reals) for *any* intermediate push state,
/// interrupted or complete; a correct implementation keeps the float residual
/// near machine precision. The inner sum is evaluated with the recurrence
/// C^(0) = R^(0), C^(t) = (D^{−1}A)·C^(t−1) + R^(t).
pub fn invariant_residual(
    g: &Graph,
    seed_values: &[f64],
    cols: usize,
    conv_exponent: f64,
    state: &PushState,
) -> Result<f64> {
    check_cap(g)?;
    let n = g.node_count();
    if seed_values.len() != n * cols {
        return Err(Error::validation("seed size mismatch in invariant evaluation".to_string()));
    }
    if state.node_count() != n || state.cols() != cols {
        return Err(Error::validation("push state does not match graph/seed".to_string()));
    }
    let d_r = g.degree_power(conv_exponent);
    let level_count = state.level_count();

    let mut expected = seed_values.to_vec(); // (D^{−1}A)^ℓ seed, updated per level
    let mut carried = vec![0.0; n * cols]; // C^(ℓ)
    let mut max_residual = 0.0f64;
    for level in 0..=level_count {
        if level > 0 {
            expected = transition_apply(g, &expected, cols);
            carried = transition_apply(g, &carried, cols);
        }
        for k in 0..cols {
            for &(u, val) in state.residue_entries(level, k) {
                carried[u as usize * cols + k] += val;
            }
        }
        let mut reserve = vec![0.0; n * cols];
        for k in 0..cols {
            for &(u, val) in state.reserve_entries(level, k) {
                reserve[u as usize * cols + k] += val;
            }
        }
        for u in 0..n {
            for k in 0..cols {
                let i = u * cols + k;
                let lhs = d_r[u] * expected[i];
                let rhs = d_r[u] * (reserve[i] + carried[i]);
                max_residual = max_residual.max((lhs - rhs).abs());
            }
        }
    }
    Ok(max_residual)
}

/// Exact value of the estimator target, restricted to the target rows:
/// d(s)^r · Σ_ℓ w_ℓ · ((D^{−1}A)^ℓ seed)(s,k), de-normalized by the seed's
/// column norms when requested. Row-major |V_t|×F output.
pub fn exact_estimate(
    g: &Graph,
    seed: &NormalizedResidueSeed,
    level_count: usize,
    conv_exponent: f64,
    weights: &[f64],
    targets: &NodeSet,
    denormalize: bool,
) -> Result<Vec<f64>> {
    check_cap(g)?;
    targets.validate(g)?;
    if weights.len() != level_count + 1 {
        return Err(Error::validation("weight count does not match level count".to_string()));
    }
    let cols = seed.cols();
    let d_r = g.degree_power(conv_exponent);
    let norms = seed.column_norms();

    let mut current = seed.values().to_vec();
    let mut acc = vec![KahanSum::default(); targets.len() * cols];
    for (level, &w) in weights.iter().enumerate().take(level_count + 1) {
        if level > 0 {
            current = transition_apply(g, &current, cols);
        }
        if w == 0.0 {
            continue;
        }
        for (i, &s) in targets.ids().iter().enumerate() {
            for k in 0..cols {
                acc[i * cols + k].add(w * current[s as usize * cols + k]);
            }
        }
    }
    let mut out = Vec::with_capacity(targets.len() * cols);
    for (i, &s) in targets.ids().iter().enumerate() {
        for k in 0..cols {
            let mut v = d_r[s as usize] * acc[i * cols + k].value();
            if denormalize {
                v *= norms[k];
            }
            out.push(v);
        }
    }
    Ok(out)
}
