//! Seeded synthetic fixtures: Erdős–Rényi graphs, two-or-more-block stochastic
//! block models, and noisy one-hot features. Used by the test suite, the
//! runnable examples, and nothing in the core pipeline.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::graph::Graph;

/// G(n, p) with p = avg_degree/(n−1). Every node is introduced explicitly, so
/// ids are stable (`label == id`) and isolated nodes survive.
pub fn er_graph(n: usize, avg_degree: f64, seed: u64) -> Result<Graph> {
    let p = (avg_degree / (n.saturating_sub(1)) as f64).min(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(u64, u64)> = (0..n as u64).map(|u| (u, u)).collect();
    for u in 0..n as u64 {
        for v in (u + 1)..n as u64 {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_labeled_edges(&edges)
}

/// Stochastic block model with `blocks` equal-sized communities: edge
/// probability `p_in` inside a block, `p_out` across. Returns the graph and
/// the planted block of every node (indexed by node id; `label == id`).
pub fn sbm(
    n: usize,
    blocks: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(Graph, Vec<u32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment: Vec<u32> = (0..n).map(|u| (u * blocks / n) as u32).collect();
    let mut edges: Vec<(u64, u64)> = (0..n as u64).map(|u| (u, u)).collect();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if assignment[u] == assignment[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u as u64, v as u64));
            }
        }
    }
    Ok((Graph::from_labeled_edges(&edges)?, assignment))
}

/// One-hot encoding of `classes[u]`, except that with probability `flip_rate`
/// a node reports a uniformly chosen *different* class instead.
pub fn noisy_onehot(
    classes: &[u32],
    class_count: usize,
    flip_rate: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; classes.len() * class_count];
    for (u, &c) in classes.iter().enumerate() {
        let mut reported = c as usize;
        if class_count > 1 && rng.random::<f64>() < flip_rate {
            let offset = rng.random_range(1..class_count);
            reported = (reported + offset) % class_count;
        }
        values[u * class_count + reported] = 1.0;
    }
    FeatureMatrix::new(classes.len(), class_count, values)
}

/// Dense uniform features in [lo, hi).
pub fn uniform_features(
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    FeatureMatrix::new(rows, cols, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_graph_is_seeded_and_keeps_every_node() {
        let a = er_graph(40, 4.0, 9).unwrap();
        let b = er_graph(40, 4.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.node_count(), 40);
        let c = er_graph(40, 4.0, 10).unwrap();
        assert_ne!(a, c);
        // labels are identity
        assert!((0..40).all(|u| a.label_of(u as u32) == u as u64));
    }

    #[test]
    fn sbm_blocks_are_balanced() {
        let (g, blocks) = sbm(100, 2, 0.2, 0.01, 3).unwrap();
        assert_eq!(g.node_count(), 100);
        assert_eq!(blocks.iter().filter(|&&b| b == 0).count(), 50);
        // dense inside, sparse across (statistically safe margins at p=0.2/0.01)
        let within: usize =
            (0..50u32).map(|u| g.neighbors(u).iter().filter(|&&v| v < 50).count()).sum();
        let across: usize =
            (0..50u32).map(|u| g.neighbors(u).iter().filter(|&&v| v >= 50).count()).sum();
        assert!(within > across * 3, "within={within} across={across}");
    }

    #[test]
    fn noisy_onehot_flip_rate_in_the_right_ballpark() {
        let classes: Vec<u32> = (0..2000).map(|u| (u % 2) as u32).collect();
        let x = noisy_onehot(&classes, 2, 0.1, 5).unwrap();
        let flipped = classes
            .iter()
            .enumerate()
            .filter(|&(u, &c)| x.get(u, c as usize) == 0.0)
            .count();
        // Binomial(2000, 0.1): mean 200, sd ≈ 13.4
        assert!((140..=260).contains(&flipped), "flipped={flipped}");
        // every row is still one-hot
        for u in 0..2000 {
            let sum: f64 = (0..2).map(|k| x.get(u, k)).sum();
            assert_eq!(sum, 1.0);
        }
    }
}
