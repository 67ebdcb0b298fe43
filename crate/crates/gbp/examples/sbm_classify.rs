//! Node classification on a stochastic block model: propagate noisy one-hot
//! block indicators, train a logistic head on 100 labels, and compare with
//! the same head trained on the raw (un-propagated) features.

use std::time::Instant;

use gbp::classifier::{evaluate, train, LabeledSplit, TrainConfig};
use gbp::estimator::{EmbeddingMatrix, EmbeddingMeta, WeightKind};
use gbp::graph::NodeSet;
use gbp::{combine, make_weights, normalize, push, sample_walks, synth};
use gbp::{PropagationConfig, Result};

fn main() -> Result<()> {
    let n = 2_000;
    let (g, blocks) = synth::sbm(n, 2, 0.02, 0.002, 97)?;
    let x = synth::noisy_onehot(&blocks, 2, 0.1, 98)?;
    println!("SBM: {} nodes, {} edges, 2 blocks, 10% label noise in the features", g.node_count(), g.edge_count());

    let cfg = PropagationConfig {
        level_count: 4,
        conv_exponent: 0.5,
        weights: make_weights(&WeightKind::Ppr { alpha: 0.1 }, 4)?,
        push_threshold: 1e-5,
        walks_per_node: 0,
        seed: 3,
        targets: NodeSet::all(&g),
        denormalize: true,
    };
    let t0 = Instant::now();
    let seed = normalize(&x, &g, cfg.conv_exponent)?;
    let state = push(&g, &seed, cfg.level_count, cfg.push_threshold)?;
    let walks = sample_walks(&g, &cfg.targets, cfg.walks_per_node, cfg.level_count, cfg.seed)?;
    let propagated = combine(&state, &walks, &g, &cfg)?;
    println!("propagation: {:?}", t0.elapsed());

    let raw_meta = EmbeddingMeta {
        config_digest: "raw-features".into(),
        denormalized: true,
        column_norms: vec![1.0; 2],
        level_count: 0,
        conv_exponent: 0.0,
        push_threshold: 1.0,
        walks_per_node: 0,
        seed: 0,
        weights: vec![1.0],
    };
    let raw = EmbeddingMatrix::new((0..n as u64).collect(), 2, x.values().to_vec(), raw_meta)?;

    // 50 train + 100 validation ids per block, the rest test
    let (mut train_ids, mut val_ids, mut test_ids) = (Vec::new(), Vec::new(), Vec::new());
    let mut counts = [0usize; 2];
    for (u, &b) in blocks.iter().enumerate() {
        let c = &mut counts[b as usize];
        match *c {
            0..=49 => train_ids.push(u as u64),
            50..=149 => val_ids.push(u as u64),
            _ => test_ids.push(u as u64),
        }
        *c += 1;
    }
    let labels = blocks.iter().enumerate().map(|(u, &b)| (u as u64, b as usize)).collect();
    let split = LabeledSplit::new(train_ids, val_ids, test_ids, labels, 2)?;
    let tc = TrainConfig { seed: 7, ..TrainConfig::default() };

    for (name, emb) in [("propagated", &propagated), ("raw features", &raw)] {
        let t = Instant::now();
        let (model, history) = train(emb, &split, &tc)?;
        let (loss, acc) = evaluate(&model, emb, &split.test, &split.labels)?;
        println!(
            "{name:>13}: test accuracy {acc:.4}, test loss {loss:.4} ({} epochs, {:?})",
            history.len(),
            t.elapsed()
        );
    }
    Ok(())
}
