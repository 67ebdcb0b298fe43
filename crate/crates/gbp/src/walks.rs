//! Monte-Carlo phase: for every target node s, run `walks_per_node` walks of
//! length L on the self-looped graph and record, per step ℓ, the fraction of
//! walks sitting at each node. The resulting S^(ℓ) rows are unbiased
//! estimates of the transition rows (D^{−1}A)^ℓ(s,·).
//!
//! # Determinism contract
//!
//! Results are bit-identical for any worker count and are part of the on-disk
//! reproducibility guarantee, so the RNG layout is pinned:
//!
//! * generator: ChaCha8 (`rand_chacha`), one independent stream per source;
//! * stream seed: `master_seed ^ splitmix64(source_id + 1)` — the SplitMix64
//!   finalizer decorrelates adjacent ids before the XOR fold;
//! * each source accumulates privately; sources are merged in ascending id
//!   order (the target set is sorted), never across workers.
//!
//! Counts are stored as integers and only divided by `walks_per_node` at
//! combination time, which keeps "entries are multiples of 1/n_r" exact.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::graph::{Graph, NodeId, NodeSet};
use crate::oracle;

/// Per-target, per-level visit counts S^(ℓ), plus the sampling parameters.
#[derive(Debug, Clone)]
pub struct WalkFrequencies {
    targets: NodeSet,
    level_count: usize,
    walks_per_node: u32,
    seed: u64,
    /// rows[target_index][level] = sorted (node, visit count).
    rows: Vec<Vec<Vec<(NodeId, u32)>>>,
    steps_taken: u64,
}

impl WalkFrequencies {
    pub fn targets(&self) -> &NodeSet {
        &self.targets
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    pub fn walks_per_node(&self) -> u32 {
        self.walks_per_node
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total walk steps actually taken: |V_t| · n_r · L.
    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Sorted (node, count) entries of S^(level) restricted to one target row.
    pub fn counts(&self, target_index: usize, level: usize) -> &[(NodeId, u32)] {
        &self.rows[target_index][level]
    }

    /// The denominator that turns counts into fractions. With n_r = 0 the
    /// only nonzero level is the deterministic S^(0) identity, stored with
    /// count 1, so the denominator is 1.
    pub fn denominator(&self) -> f64 {
        self.walks_per_node.max(1) as f64
    }

    /// S^(level)(s, u) as a fraction, for tests and diagnostics.
    pub fn fraction(&self, target_index: usize, level: usize, node: NodeId) -> f64 {
        let entries = self.counts(target_index, level);
        match entries.binary_search_by_key(&node, |e| e.0) {
            Ok(i) => entries[i].1 as f64 / self.denominator(),
            Err(_) => 0.0,
        }
    }
}

/// SplitMix64 finalizer, the documented stream-derivation mixer.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_for(master_seed: u64, source: NodeId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(master_seed ^ splitmix64(source as u64 + 1))
}

/// Run the Monte-Carlo phase. `level_count` may be 0 (walks degenerate to the
/// source indicator) and `walks_per_node` may be 0 (S^(0) is still set to the
/// exact identity — (D^{−1}A)^0 is known, there is nothing to estimate — and
/// all deeper levels are empty).
pub fn sample_walks(
    g: &Graph,
    targets: &NodeSet,
    walks_per_node: u32,
    level_count: usize,
    master_seed: u64,
) -> Result<WalkFrequencies> {
    targets.validate(g)?;
    let rows: Vec<Vec<Vec<(NodeId, u32)>>> = targets
        .ids()
        .par_iter()
        .map(|&source| {
            let mut levels: Vec<Vec<(NodeId, u32)>> = Vec::with_capacity(level_count + 1);
            levels.push(vec![(source, walks_per_node.max(1))]);
            if level_count == 0 || walks_per_node == 0 {
                levels.resize(level_count + 1, Vec::new());
                return levels;
            }
            let mut counters: Vec<HashMap<NodeId, u32>> =
                vec![HashMap::new(); level_count];
            let mut rng = stream_for(master_seed, source);
            for _ in 0..walks_per_node {
                let mut current = source;
                for counter in counters.iter_mut() {
                    let nbrs = g.neighbors(current);
                    current = nbrs[rng.random_range(0..nbrs.len())];
                    *counter.entry(current).or_insert(0) += 1;
                }
            }
            for counter in counters {
                let mut entries: Vec<(NodeId, u32)> = counter.into_iter().collect();
                entries.sort_unstable_by_key(|e| e.0);
                levels.push(entries);
            }
            levels
        })
        .collect();
    let steps_taken = if walks_per_node == 0 {
        0
    } else {
        targets.len() as u64 * walks_per_node as u64 * level_count as u64
    };
    Ok(WalkFrequencies {
        targets: targets.clone(),
        level_count,
        walks_per_node,
        seed: master_seed,
        rows,
        steps_taken,
    })
}

/// Exact (D^{−1}A)^ℓ rows for the targets — the test oracle the sampler is
/// checked against. Dense and O(n²L); small graphs only.
pub fn expected_transition(
    g: &Graph,
    targets: &NodeSet,
    level_count: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    oracle::exact_transition_rows(g, targets, level_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_edge_list;
    use crate::synth;
    use std::io::Cursor;

    fn pair_graph() -> Graph {
        load_edge_list(Cursor::new("0 1")).unwrap()
    }

    #[test]
    fn level_zero_is_identity() {
        let g = synth::er_graph(30, 4.0, 1).unwrap();
        let targets = NodeSet::new(vec![3, 17, 29]);
        let w = sample_walks(&g, &targets, 5, 0, 42).unwrap();
        for (i, &s) in targets.ids().iter().enumerate() {
            assert_eq!(w.counts(i, 0), &[(s, 5)]);
            assert_eq!(w.fraction(i, 0, s), 1.0);
        }
        assert_eq!(w.steps_taken(), 0);
    }

    #[test]
    fn single_node_graph_stays_put() {
        let g = load_edge_list(Cursor::new("0 0")).unwrap();
        let targets = NodeSet::new(vec![0]);
        let w = sample_walks(&g, &targets, 3, 2, 7).unwrap();
        for level in 0..=2 {
            assert_eq!(w.fraction(0, level, 0), 1.0);
        }
        assert_eq!(w.steps_taken(), 3 * 2);
    }

    #[test]
    fn zero_walks_keeps_deterministic_identity() {
        let g = pair_graph();
        let targets = NodeSet::new(vec![0, 1]);
        let w = sample_walks(&g, &targets, 0, 3, 9).unwrap();
        assert_eq!(w.fraction(0, 0, 0), 1.0);
        assert_eq!(w.denominator(), 1.0);
        for level in 1..=3 {
            assert!(w.counts(0, level).is_empty());
            assert!(w.counts(1, level).is_empty());
        }
        assert_eq!(w.steps_taken(), 0);
    }

    #[test]
    fn rows_are_stochastic_integer_multiples() {
        let g = synth::er_graph(50, 6.0, 2).unwrap();
        let targets = NodeSet::new((0..20).collect());
        let n_r = 13u32;
        let w = sample_walks(&g, &targets, n_r, 4, 123).unwrap();
        for i in 0..targets.len() {
            for level in 0..=4 {
                let total: u32 = w.counts(i, level).iter().map(|e| e.1).sum();
                assert_eq!(total, n_r, "counts sum to n_r exactly");
                assert!(w.counts(i, level).len() <= n_r.min(50) as usize);
            }
        }
        assert_eq!(w.steps_taken(), 20 * 13 * 4);
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let g = synth::er_graph(80, 5.0, 3).unwrap();
        let targets = NodeSet::new((0..40).collect());
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| sample_walks(&g, &targets, 8, 4, 777).unwrap())
        };
        let a = run(1);
        let b = run(4);
        for i in 0..targets.len() {
            for level in 0..=4 {
                assert_eq!(a.counts(i, level), b.counts(i, level));
            }
        }
    }

    #[test]
    fn pair_graph_empirical_mean_matches_chain() {
        // S^(1)(0,·) estimates (0.5, 0.5); mean over 1000 seeds within
        // 3·sqrt(0.25/(1000·n_r)) per entry.
        let g = pair_graph();
        let targets = NodeSet::new(vec![0]);
        let n_r = 4u32;
        let trials = 1000u64;
        let mut mean0 = 0.0;
        let mut mean1 = 0.0;
        for seed in 0..trials {
            let w = sample_walks(&g, &targets, n_r, 1, seed).unwrap();
            mean0 += w.fraction(0, 1, 0);
            mean1 += w.fraction(0, 1, 1);
        }
        mean0 /= trials as f64;
        mean1 /= trials as f64;
        let tol = 3.0 * (0.25 / (trials as f64 * n_r as f64)).sqrt();
        assert!((mean0 - 0.5).abs() < tol, "mean0={mean0}, tol={tol}");
        assert!((mean1 - 0.5).abs() < tol, "mean1={mean1}, tol={tol}");
    }

    #[test]
    fn empirical_mean_matches_oracle_rows() {
        // Unbiasedness on an irregular graph: average S^(ℓ) over many seeds
        // and compare to exact (D^{−1}A)^ℓ rows entrywise.
        let g = load_edge_list(Cursor::new("0 1\n1 2\n2 3\n3 0\n0 2")).unwrap();
        let targets = NodeSet::new(vec![0]);
        let level_count = 3usize;
        let n_r = 8u32;
        let trials = 1000u64;
        let exact = expected_transition(&g, &targets, level_count).unwrap();
        let n = g.node_count();
        let mut sums = vec![vec![0.0; n]; level_count + 1];
        for seed in 0..trials {
            let w = sample_walks(&g, &targets, n_r, level_count, seed).unwrap();
            for level in 0..=level_count {
                for &(u, c) in w.counts(0, level) {
                    sums[level][u as usize] += c as f64 / w.denominator();
                }
            }
        }
        for level in 0..=level_count {
            for u in 0..n {
                let mean = sums[level][u] / trials as f64;
                let p = exact[level][0][u];
                // per-walk variance p(1−p)/n_r, averaged over `trials` seeds
                let sd = (p * (1.0 - p) / (n_r as f64 * trials as f64)).sqrt();
                let tol = 4.0 * sd + 1e-9;
                assert!(
                    (mean - p).abs() <= tol,
                    "level {level} node {u}: mean={mean} exact={p} tol={tol}"
                );
            }
        }
    }

    #[test]
    fn out_of_range_target_rejected() {
        let g = pair_graph();
        assert!(sample_walks(&g, &NodeSet::new(vec![5]), 1, 1, 0).is_err());
    }
}
