//! Deriving (r_max, n_r) from an error budget ε, then measuring how the
//! realized error compares to the per-entry budget d(s)^r · ε.

use gbp::estimator::WeightKind;
use gbp::graph::NodeSet;
use gbp::{combine, make_weights, normalize, oracle, plan_parameters, push, sample_walks, synth};
use gbp::{PropagationConfig, Result};

fn main() -> Result<()> {
    let n = 1_000;
    let level_count = 4;
    let g = synth::er_graph(n, 10.0, 31)?;
    let x = synth::uniform_features(n, 4, 0.0, 1.0, 32)?;
    let targets = NodeSet::new((0..100).collect());

    println!("{:>8}  {:>12}  {:>8}", "epsilon", "r_max", "n_r");
    for epsilon in [0.2, 0.1, 0.05, 0.02, 0.01] {
        let p = plan_parameters(&g, &targets, level_count, epsilon)?;
        println!("{epsilon:>8}  {:>12.4e}  {:>8}", p.push_threshold, p.walks_per_node);
    }

    let epsilon = 0.05;
    let planned = plan_parameters(&g, &targets, level_count, epsilon)?;
    let weights = make_weights(&WeightKind::Ppr { alpha: 0.2 }, level_count)?;
    let seed = normalize(&x, &g, 0.5)?;
    let state = push(&g, &seed, level_count, planned.push_threshold)?;
    let exact = oracle::exact_estimate(&g, &seed, level_count, 0.5, weights.weights(), &targets, false)?;
    let d_r = g.degree_power(0.5);

    println!("\nrunning 5 seeds at the ε = {epsilon} plan (r_max = {:.4e}, n_r = {}):", planned.push_threshold, planned.walks_per_node);
    for run in 0..5u64 {
        let cfg = PropagationConfig {
            level_count,
            conv_exponent: 0.5,
            weights: weights.clone(),
            push_threshold: planned.push_threshold,
            walks_per_node: planned.walks_per_node,
            seed: run,
            targets: targets.clone(),
            denormalize: false,
        };
        let walks = sample_walks(&g, &targets, cfg.walks_per_node, level_count, cfg.seed)?;
        let e = combine(&state, &walks, &g, &cfg)?;
        let mut beyond = 0usize;
        let mut worst_ratio: f64 = 0.0;
        for (i, &s) in targets.ids().iter().enumerate() {
            let budget = d_r[s as usize] * epsilon;
            for k in 0..e.cols() {
                let err = (e.row(i)[k] - exact[i * e.cols() + k]).abs();
                worst_ratio = worst_ratio.max(err / budget);
                if err > budget {
                    beyond += 1;
                }
            }
        }
        println!(
            "  seed {run}: {beyond} of {} entries beyond budget (tail bound 1/n = {:.1e}); worst err/budget = {worst_ratio:.3}",
            targets.len() * e.cols(),
            1.0 / n as f64
        );
    }
    Ok(())
}
